"""Societal-dynamics ODE family: predator-prey base model, the four-variable
commoners/elites/nature/wealth system, its simplified variants, a fixed-step
RK4 integrator and window sampling.

State variables are (x_C, x_E, y, w): commoners, elites, nature stock and
accumulated wealth.  The depletion factor is expressed as a dimensionless
multiple of the base per-worker rate 2*eta*s/lambda, where
eta = (alpha_M - beta_C) / (alpha_M - alpha_m) clamped to [1e-6, 1]; this
keeps order-1 depletion values meaningful against populations of 1e2..1e4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, IntegrationDivergedError

VARIABLES = ("x_C", "x_E", "y", "w")

PARAM_NAMES = (
    "alpha_m", "alpha_M", "beta_C", "beta_E", "s", "rho", "gamma_nat",
    "lambda_cap", "kappa", "delta_mult", "mu_eq", "xC0", "xE0", "y0", "w0",
)

N_PARAMS = 15

ETA_FLOOR = 1e-6
ETA_CEIL = 1.0
EMPTY_CLASS = 1e-12  # below this a population class counts as empty

# Stored states are clamped at zero; values below this floor are flushed to
# exact zero as well.  A reservoir at denormal scale is extinct: without the
# flush, nature at 1e-50 regrows after centuries and full societal collapse
# becomes a bounce, contradicting the modeled irreversibility.
STATE_FLOOR = EMPTY_CLASS

DEFAULT_DT = 0.05


class ModelVariant(Enum):
    """Model selector; the numbered variants apply subsets of the three
    simplifications: A (elites also produce), B (equal class consumption),
    C (inequality dropped from the wealth threshold)."""

    PREDATOR_PREY = "predator-prey"
    HANDY = "handy"
    HANDY1 = "handy1"
    HANDY2 = "handy2"
    HANDY3 = "handy3"
    HANDY4 = "handy4"

    @property
    def changes(self) -> frozenset:
        return _VARIANT_CHANGES[self]


_VARIANT_CHANGES = {
    ModelVariant.PREDATOR_PREY: frozenset(),
    ModelVariant.HANDY: frozenset(),
    ModelVariant.HANDY1: frozenset("AC"),
    ModelVariant.HANDY2: frozenset("BC"),
    ModelVariant.HANDY3: frozenset("AB"),
    ModelVariant.HANDY4: frozenset("ABC"),
}


@dataclass(frozen=True)
class PredatorPreyParams:
    """Two-species baseline model parameters.

    alpha: predator birth coupling (1/(prey*year)); beta: predator death
    rate (1/year); gamma: prey birth rate (1/year); delta: predation rate
    (1/(predator*year)); x0, y0: initial predator/prey populations.
    """

    alpha: float
    beta: float
    gamma: float
    delta: float
    x0: float
    y0: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta", "x0", "y0"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class HandyParams:
    """The 15-component configuration every estimator searches over:
    11 parameters plus the 4 initial state values.

    alpha_m / alpha_M: normal / famine death rates (1/year)
    beta_C / beta_E:   commoners / elites birth rates (1/year)
    s:    subsistence salary per capita (wealth/(person*year))
    rho:  threshold wealth per capita (wealth/person)
    gamma_nat:  nature regeneration rate (1/(nature*year))
    lambda_cap: nature carrying capacity
    kappa: inequality factor (elites consume kappa times more)
    delta_mult: depletion factor as a multiple of the base rate 2*eta*s/lambda
    mu_eq: elites-to-commoners equilibrium parameter; carried and estimated
        but dynamically inert unless eta_from_mu is requested
    xC0, xE0, y0, w0: initial state values
    """

    alpha_m: float
    alpha_M: float
    beta_C: float
    beta_E: float
    s: float
    rho: float
    gamma_nat: float
    lambda_cap: float
    kappa: float
    delta_mult: float
    mu_eq: float
    xC0: float
    xE0: float
    y0: float
    w0: float

    def __post_init__(self):
        if not self.alpha_M >= self.alpha_m >= 0:
            raise ConfigurationError("need alpha_M >= alpha_m >= 0")
        if self.kappa < 1:
            raise ConfigurationError("kappa must be >= 1")
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be finite and >= 0")

    def as_array(self) -> np.ndarray:
        """Canonical 15-vector in PARAM_NAMES order."""
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "HandyParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (N_PARAMS,):
            raise ConfigurationError(f"expected {N_PARAMS} components, got {values.shape}")
        return cls(**dict(zip(PARAM_NAMES, values.tolist())))

    def initial_state(self) -> np.ndarray:
        return np.array([self.xC0, self.xE0, self.y0, self.w0], dtype=float)


@dataclass(frozen=True)
class Trajectory:
    """Dense output of a fixed-step integration: states[n] is the state at
    t0 + n*dt."""

    t0: float
    dt: float
    states: np.ndarray  # (n_points, n_vars)
    variables: tuple = VARIABLES

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.shape[0] == 0:
            raise ConfigurationError("trajectory needs at least one stored state")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")

    @property
    def n_points(self) -> int:
        return self.states.shape[0]

    @property
    def t_end(self) -> float:
        return self.t0 + (self.n_points - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_points) * self.dt

    def index_at(self, t: float) -> int:
        """Nearest grid index for time t; raises if t is outside the span."""
        idx = int(round((t - self.t0) / self.dt))
        if idx < 0 or idx >= self.n_points:
            raise ConfigurationError(f"time {t} outside trajectory span "
                                     f"[{self.t0}, {self.t_end}]")
        return idx

    def state_at(self, t: float) -> np.ndarray:
        return self.states[self.index_at(t)]

    def write_csv(self, path) -> None:
        """CSV export with header t,<variables>, 17 significant digits."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t," + ",".join(self.variables) + "\n")
            for i, t in enumerate(self.times()):
                row = ",".join(f"{v:.17g}" for v in self.states[i])
                fh.write(f"{t:.17g},{row}\n")


@dataclass(frozen=True)
class SampledSeries:
    """The f+1 equally spaced boundary points of a trajectory window."""

    window: tuple  # (t_start, t_end)
    f: int
    times: np.ndarray   # (f+1,)
    values: np.ndarray  # (f+1, n_vars)
    variables: tuple = VARIABLES

    @property
    def n_points(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# model equations

def effective_depletion(p: HandyParams, eta_from_mu: bool = False) -> float:
    """Depletion coefficient (1/(person*year)) entering the x*y terms.

    Returns delta_mult * 2*eta*s/lambda with eta = (alpha_M - beta_C) /
    (alpha_M - alpha_m) clamped to [1e-6, 1].  With eta_from_mu the clamped
    mu_eq parameter is used as eta instead.
    """
    if not p.alpha_M > p.alpha_m:
        raise ConfigurationError("effective depletion needs alpha_M > alpha_m")
    if not p.lambda_cap > 0:
        raise ConfigurationError("effective depletion needs lambda_cap > 0")
    raw = p.mu_eq if eta_from_mu else (p.alpha_M - p.beta_C) / (p.alpha_M - p.alpha_m)
    eta = min(max(raw, ETA_FLOOR), ETA_CEIL)
    result = p.delta_mult * 2.0 * eta * p.s / p.lambda_cap
    if not math.isfinite(result):
        raise ConfigurationError(f"non-finite depletion coefficient ({result})")
    return result


def consumption_and_threshold(p: HandyParams, state, variant: ModelVariant = ModelVariant.HANDY):
    """Per-class consumption rates and the wealth threshold (C_C, C_E, w_th).

    w_th = rho*x_C + kappa*rho*x_E, or rho*(x_C + x_E) under change C.
    Consumption is scaled by min(1, w/w_th); kappa is dropped from elite
    consumption under change B.  An exactly zero threshold clamps the
    scale to 1 (an empty society consumes nothing anyway).
    """
    xC, xE, _, w = np.asarray(state, dtype=float)
    changes = variant.changes
    if "C" in changes:
        w_th = p.rho * (xC + xE)
    else:
        w_th = p.rho * xC + p.kappa * p.rho * xE
    scale = 1.0 if w_th <= 0 else min(1.0, w / w_th)
    c_C = scale * p.s * xC
    c_E = scale * p.s * xE if "B" in changes else scale * p.kappa * p.s * xE
    return c_C, c_E, w_th


def death_rates(p: HandyParams, state, c_C: float, c_E: float):
    """Famine-adjusted death rates (alpha_C, alpha_E).

    alpha_X = alpha_m + max(0, 1 - C_X/(s*x_X)) * (alpha_M - alpha_m); for a
    class below EMPTY_CLASS the ratio is defined as 1, so alpha_X = alpha_m.
    """
    xC, xE = float(state[0]), float(state[1])
    span = p.alpha_M - p.alpha_m

    def rate(x, c):
        ratio = 1.0 if x < EMPTY_CLASS else c / (p.s * x)
        return p.alpha_m + max(0.0, 1.0 - ratio) * span

    return rate(xC, c_C), rate(xE, c_E)


def _handy_precompute(params: np.ndarray, changes: frozenset, eta_from_mu: bool) -> dict:
    """Parameter-only quantities hoisted out of the per-step derivative."""
    P = params
    alpha_m, alpha_M = P[:, 0], P[:, 1]
    beta_C, beta_E = P[:, 2], P[:, 3]
    s, rho = P[:, 4], P[:, 5]
    gamma, lam = P[:, 6], P[:, 7]
    kappa, delta, mu = P[:, 8], P[:, 9], P[:, 10]
    if eta_from_mu:
        raw = mu
    else:
        span = alpha_M - alpha_m
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.where(span > 0, (alpha_M - beta_C) / np.where(span > 0, span, 1.0), np.nan)
    eta = np.clip(raw, ETA_FLOOR, ETA_CEIL)
    return {
        "alpha_m": alpha_m,
        "alpha_span": alpha_M - alpha_m,
        "beta_C": beta_C,
        "beta_E": beta_E,
        "s": s,
        "rho": rho,
        "gamma": gamma,
        "lam": lam,
        # kappa multiplies the elite consumption ratio; 1 under change B
        "cons_mult_E": np.ones_like(kappa) if "B" in changes else kappa,
        "kappa_rho": kappa * rho,
        "delta_eff": delta * 2.0 * eta * s / lam,
        "use_total_producers": "A" in changes,
        "pooled_threshold": "C" in changes,
    }


def _handy_rhs(state: np.ndarray, pre: dict) -> np.ndarray:
    """Vectorized derivative of the four-variable system; state is (B, 4).

    The consumption ratio C_X/(s*x_X) reduces algebraically to the supply
    factor min(1, w/w_th) times the class consumption multiplier, which
    avoids 0/0 for empty classes; the empty-class rule (ratio := 1) is
    applied explicitly so death rates stay at alpha_m there.
    """
    xC, xE, y, w = state[:, 0], state[:, 1], state[:, 2], state[:, 3]
    s = pre["s"]
    if pre["pooled_threshold"]:
        w_th = pre["rho"] * (xC + xE)
    else:
        w_th = pre["rho"] * xC + pre["kappa_rho"] * xE
    supply = np.where(w_th > 0, np.minimum(1.0, w / np.where(w_th > 0, w_th, 1.0)), 1.0)
    c_C = supply * s * xC
    c_E = supply * pre["cons_mult_E"] * s * xE

    ratio_C = np.where(xC < EMPTY_CLASS, 1.0, supply)
    ratio_E = np.where(xE < EMPTY_CLASS, 1.0, supply * pre["cons_mult_E"])
    alpha_C = pre["alpha_m"] + np.maximum(0.0, 1.0 - ratio_C) * pre["alpha_span"]
    alpha_E = pre["alpha_m"] + np.maximum(0.0, 1.0 - ratio_E) * pre["alpha_span"]

    producers = xC + xE if pre["use_total_producers"] else xC
    production = pre["delta_eff"] * producers * y

    out = np.empty_like(state)
    out[:, 0] = (pre["beta_C"] - alpha_C) * xC
    out[:, 1] = (pre["beta_E"] - alpha_E) * xE
    out[:, 2] = pre["gamma"] * y * (pre["lam"] - y) - production
    out[:, 3] = production - c_C - c_E
    return out


def _predator_prey_rhs(state: np.ndarray, pre: dict) -> np.ndarray:
    x, y = state[:, 0], state[:, 1]
    out = np.empty_like(state)
    out[:, 0] = pre["alpha"] * y * x - pre["beta"] * x
    out[:, 1] = pre["gamma"] * y - pre["delta"] * x * y
    return out


def derivatives(p, state, variant: ModelVariant = ModelVariant.HANDY,
                eta_from_mu: bool = False) -> np.ndarray:
    """State derivative at a single state, per the variant's equations."""
    state = np.asarray(state, dtype=float)[None, :]
    if isinstance(p, PredatorPreyParams) or variant is ModelVariant.PREDATOR_PREY:
        pre = {"alpha": p.alpha, "beta": p.beta, "gamma": p.gamma, "delta": p.delta}
        result = _predator_prey_rhs(state, pre)[0]
    else:
        pre = _handy_precompute(p.as_array()[None, :], variant.changes, eta_from_mu)
        result = _handy_rhs(state, pre)[0]
    if not np.all(np.isfinite(result)):
        bad = [VARIABLES[i] for i in np.flatnonzero(~np.isfinite(result))]
        raise IntegrationDivergedError(f"non-finite derivative in {bad}", time=math.nan)
    return result


# ---------------------------------------------------------------------------
# integration

def _step_count(t0: float, t_end: float, dt: float) -> int:
    if t_end < t0:
        raise ConfigurationError("t_end must be >= t0")
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    n = int(round((t_end - t0) / dt))
    if abs(t0 + n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ConfigurationError("dt must divide the integration span")
    return n


def _integrate(rhs, pre: dict, x0: np.ndarray, t0: float, t_end: float, dt: float,
               record_steps=None):
    """Classical RK4 over a batch of initial states, clamping every stored
    state componentwise at 0 (with the STATE_FLOOR extinction flush).

    record_steps: optional sorted array of step indices to record; when
    None the full trajectory is stored.  Returns (out, ok, fail_times):
    rows that go non-finite are frozen at zero, flagged in ok and their
    first failure time reported.
    """
    n_steps = _step_count(t0, t_end, dt)
    x = np.array(x0, dtype=float)
    x = np.where(x < STATE_FLOOR, 0.0, x)
    batch = x.shape[0]

    if record_steps is None:
        out = np.empty((batch, n_steps + 1) + x.shape[1:], dtype=float)
        slot_of = None
    else:
        record_steps = np.asarray(record_steps, dtype=int)
        out = np.empty((batch, len(record_steps)) + x.shape[1:], dtype=float)
        slot_of = {}
        for slot, step in enumerate(record_steps):
            slot_of.setdefault(int(step), []).append(slot)

    ok = np.ones(batch, dtype=bool)
    fail_times = np.full(batch, np.nan)

    def record(step_idx):
        if slot_of is None:
            out[:, step_idx] = x
        else:
            for slot in slot_of.get(step_idx, ()):
                out[:, slot] = x

    record(0)
    half = 0.5 * dt
    sixth = dt / 6.0
    for step in range(1, n_steps + 1):
        k1 = rhs(x, pre)
        k2 = rhs(x + half * k1, pre)
        k3 = rhs(x + half * k2, pre)
        k4 = rhs(x + dt * k3, pre)
        x = x + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        x = np.where(x < STATE_FLOOR, 0.0, x)
        finite = np.isfinite(x).all(axis=tuple(range(1, x.ndim)))
        if not finite.all():
            newly = ok & ~finite
            fail_times[newly] = t0 + step * dt
            ok &= finite
            x = np.where(finite[(...,) + (None,) * (x.ndim - 1)], x, 0.0)
        record(step)
    return out, ok, fail_times


def simulate(p, variant: ModelVariant = ModelVariant.HANDY, t0: float = 0.0,
             t_end: float = 450.0, dt: float = DEFAULT_DT,
             eta_from_mu: bool = False) -> Trajectory:
    """Integrate one parameter set and return the dense trajectory.

    Deterministic: identical inputs yield bit-identical trajectories.
    """
    if isinstance(p, PredatorPreyParams) or variant is ModelVariant.PREDATOR_PREY:
        pre = {"alpha": p.alpha, "beta": p.beta, "gamma": p.gamma, "delta": p.delta}
        rhs, x0, variables = _predator_prey_rhs, [[p.x0, p.y0]], ("x", "y")
    else:
        pre = _handy_precompute(p.as_array()[None, :], variant.changes, eta_from_mu)
        rhs, x0, variables = _handy_rhs, [p.initial_state()], VARIABLES
    out, ok, fail_times = _integrate(rhs, pre, np.asarray(x0, dtype=float), t0, t_end, dt)
    if not ok[0]:
        raise IntegrationDivergedError("integration diverged", time=float(fail_times[0]))
    return Trajectory(t0=t0, dt=dt, states=out[0], variables=variables)


def simulate_batch(param_rows: np.ndarray, variant: ModelVariant, t0: float,
                   t_end: float, dt: float, record_times,
                   eta_from_mu: bool = False):
    """Integrate many parameter rows at once, storing only the states at
    record_times (nearest grid points).

    Returns (values, ok): values has shape (batch, len(record_times), 4) and
    rows of diverged parameter sets are flagged False in ok.
    """
    param_rows = np.asarray(param_rows, dtype=float)
    if param_rows.ndim != 2 or param_rows.shape[1] != N_PARAMS:
        raise ConfigurationError(f"param_rows must be (batch, {N_PARAMS})")
    record_times = np.asarray(record_times, dtype=float)
    steps = np.rint((record_times - t0) / dt).astype(int)
    n_steps = _step_count(t0, t_end, dt)
    if (steps < 0).any() or (steps > n_steps).any():
        raise ConfigurationError("record_times outside the integration span")
    pre = _handy_precompute(param_rows, variant.changes, eta_from_mu)
    x0 = param_rows[:, 11:15]
    out, ok, _ = _integrate(_handy_rhs, pre, x0, t0, t_end, dt, record_steps=steps)
    return out, ok


def sample_window(traj: Trajectory, window, f: int) -> SampledSeries:
    """Select the f+1 equally spaced boundary points of a window, each value
    taken at the nearest trajectory grid time."""
    t_start, t_end = float(window[0]), float(window[1])
    if f < 1:
        raise ConfigurationError("sampling frequency f must be >= 1")
    if t_end <= t_start:
        raise ConfigurationError("window must have positive length")
    eps = 1e-9 * max(1.0, abs(traj.t_end))
    if t_start < traj.t0 - eps or t_end > traj.t_end + eps:
        raise ConfigurationError(f"window [{t_start}, {t_end}] outside trajectory "
                                 f"span [{traj.t0}, {traj.t_end}]")
    times = t_start + np.arange(f + 1) * (t_end - t_start) / f
    idx = np.rint((times - traj.t0) / traj.dt).astype(int)
    idx = np.clip(idx, 0, traj.n_points - 1)
    return SampledSeries(window=(t_start, t_end), f=f, times=times,
                         values=traj.states[idx].copy(), variables=traj.variables)
