"""Coupled-ensemble forecasting: M imperfect submodels linked by per-variable
attraction coefficients, integrated as one system; the supermodel output is
the ensemble-average trajectory.

Coefficients C[i, mu, nu] >= 0 pull variable i of submodel mu toward
submodel nu.  The trainable tensor is symmetric over fully connected pairs
of the coupled variables; the nudged adaptation scheme evolves directed
(per-ordered-pair) coefficients inside barrier walls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import inference
from .dynamics import (
    VARIABLES, HandyParams, ModelVariant, SampledSeries, Trajectory,
    _handy_precompute, _handy_rhs, _integrate, _step_count, sample_window,
)
from .errors import (
    BarrierError, ConfigurationError, IntegrationDivergedError,
    ShapeMismatchError,
)

N_VARS = len(VARIABLES)
DEFAULT_COUPLED_VARS = ("x_E",)
DEFAULT_COUPLING_BOUNDS = (0.0, 0.5)


def _var_indices(coupled_vars) -> tuple:
    try:
        return tuple(VARIABLES.index(v) for v in coupled_vars)
    except ValueError:
        raise ConfigurationError(
            f"coupled_vars must be a subset of {VARIABLES}, got {coupled_vars}")


@dataclass(frozen=True)
class CouplingTensor:
    """Symmetric nonnegative coupling coefficients over the coupled
    variables; free coefficients are the upper-triangle entries, ordered by
    (variable, mu < nu)."""

    n_models: int
    coupled_vars: tuple
    values: np.ndarray  # (N_VARS, M, M)
    bounds: tuple = DEFAULT_COUPLING_BOUNDS

    def __post_init__(self):
        if self.n_models < 1:
            raise ConfigurationError("need at least one submodel")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (N_VARS, self.n_models, self.n_models):
            raise ConfigurationError(
                f"values must have shape ({N_VARS}, M, M) with M={self.n_models}")
        lo, hi = self.bounds
        if not lo < hi:
            raise ConfigurationError("bounds must satisfy lo < hi")
        if not np.allclose(values, values.transpose(0, 2, 1)):
            raise ConfigurationError("coupling coefficients must be symmetric")
        if (values < 0).any():
            raise ConfigurationError("coupling coefficients must be nonnegative")
        idx = _var_indices(self.coupled_vars)
        mask = np.zeros_like(values, dtype=bool)
        for i in idx:
            mask[i] = True
        np.einsum("ijj->ij", mask)[:] = False  # diagonal is not a coefficient
        if values[~mask].any():
            raise ConfigurationError(
                "nonzero coefficients outside the coupled variables/pairs")
        active = values[mask]
        if (active < lo - 1e-12).any() or (active > hi + 1e-12).any():
            raise ConfigurationError("coefficients outside the stated bounds")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "coupled_vars", tuple(self.coupled_vars))

    @property
    def n_free(self) -> int:
        m = self.n_models
        return len(self.coupled_vars) * m * (m - 1) // 2

    def free(self) -> np.ndarray:
        """Upper-triangle coefficients in (variable, mu < nu) order."""
        m = self.n_models
        out = []
        for i in _var_indices(self.coupled_vars):
            for mu in range(m):
                for nu in range(mu + 1, m):
                    out.append(self.values[i, mu, nu])
        return np.array(out)

    @classmethod
    def from_free(cls, free, n_models: int, coupled_vars=DEFAULT_COUPLED_VARS,
                  bounds=DEFAULT_COUPLING_BOUNDS) -> "CouplingTensor":
        free = np.asarray(free, dtype=float).ravel()
        values = _expand_free(free[None, :], n_models, _var_indices(coupled_vars))[0]
        return cls(n_models=n_models, coupled_vars=tuple(coupled_vars),
                   values=values, bounds=tuple(bounds))

    @classmethod
    def zeros(cls, n_models: int, coupled_vars=DEFAULT_COUPLED_VARS,
              bounds=DEFAULT_COUPLING_BOUNDS) -> "CouplingTensor":
        n_pairs = n_models * (n_models - 1) // 2
        return cls.from_free(np.zeros(len(tuple(coupled_vars)) * n_pairs),
                             n_models, coupled_vars, bounds)

    def write_csv(self, path) -> None:
        """CSV triples (variable, mu, nu, value) for the free coefficients."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("variable,mu,nu,value\n")
            for i in _var_indices(self.coupled_vars):
                for mu in range(self.n_models):
                    for nu in range(mu + 1, self.n_models):
                        fh.write(f"{VARIABLES[i]},{mu},{nu},"
                                 f"{self.values[i, mu, nu]:.17g}\n")


def _expand_free(free_rows: np.ndarray, n_models: int, var_idx: tuple) -> np.ndarray:
    """(B, n_free) free-coefficient rows -> (B, N_VARS, M, M) symmetric."""
    b = free_rows.shape[0]
    m = n_models
    n_pairs = m * (m - 1) // 2
    if free_rows.shape[1] != len(var_idx) * n_pairs:
        raise ShapeMismatchError(
            f"expected {len(var_idx) * n_pairs} free coefficients, "
            f"got {free_rows.shape[1]}")
    values = np.zeros((b, N_VARS, m, m))
    pos = 0
    for i in var_idx:
        for mu in range(m):
            for nu in range(mu + 1, m):
                values[:, i, mu, nu] = free_rows[:, pos]
                values[:, i, nu, mu] = free_rows[:, pos]
                pos += 1
    return values


def _coupled_rhs(state: np.ndarray, pre: dict) -> np.ndarray:
    """Derivative of the coupled (B, M, 4) system: per-submodel dynamics
    plus C[i, mu, nu] * (x_nu^i - x_mu^i) on the coupled variables."""
    out = np.empty_like(state)
    for mu, sub_pre in enumerate(pre["submodels"]):
        out[:, mu] = _handy_rhs(state[:, mu], sub_pre)
    C = pre["coupling"]  # (B, N_VARS, M, M)
    # diff[b, m, n, i] = state[b, n, i] - state[b, m, i]
    diff = state[:, None, :, :] - state[:, :, None, :]
    out += np.einsum("bimn,bmni->bmi", C, diff)
    return out


def _submodel_pres(submodels, eta_from_mu: bool) -> list:
    return [_handy_precompute(p.as_array()[None, :], ModelVariant.HANDY.changes,
                              eta_from_mu)
            for p in submodels]


def coupled_derivatives(submodels, states, tensor: CouplingTensor,
                        eta_from_mu: bool = False) -> np.ndarray:
    """Per-submodel state derivatives of the coupled system at one state."""
    states = np.asarray(states, dtype=float)
    m = len(submodels)
    if states.shape != (m, N_VARS):
        raise ShapeMismatchError(f"states must be ({m}, {N_VARS})")
    if tensor.n_models != m:
        raise ShapeMismatchError("tensor is dimensioned for a different M")
    pre = {"submodels": _submodel_pres(submodels, eta_from_mu),
           "coupling": tensor.values[None, :, :, :]}
    return _coupled_rhs(states[None], pre)[0]


@dataclass(frozen=True)
class SupermodelRun:
    submodel_trajectories: tuple  # one Trajectory per submodel
    ensemble: Trajectory

    def write_csv(self, path) -> None:
        """All trajectories in the dynamics CSV format with a leading
        submodel column; the ensemble row index is -1."""
        trajs = [(-1, self.ensemble)] + list(enumerate(self.submodel_trajectories))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("submodel,t," + ",".join(VARIABLES) + "\n")
            for label, traj in trajs:
                for i, t in enumerate(traj.times()):
                    row = ",".join(f"{v:.17g}" for v in traj.states[i])
                    fh.write(f"{label},{t:.17g},{row}\n")


def simulate_supermodel(submodels, tensor: CouplingTensor, t0: float = 0.0,
                        t_end: float = 450.0, dt: float = 0.05,
                        eta_from_mu: bool = False) -> SupermodelRun:
    """Integrate the coupled 4M-dimensional system (RK4, zero clamping as in
    the single-model integrator); each submodel starts from its own
    estimated initial state.  The ensemble is the mean over submodels."""
    m = len(submodels)
    if tensor.n_models != m:
        raise ShapeMismatchError("tensor is dimensioned for a different M")
    pre = {"submodels": _submodel_pres(submodels, eta_from_mu),
           "coupling": tensor.values[None, :, :, :]}
    x0 = np.stack([p.initial_state() for p in submodels])[None]
    out, ok, fail_times = _integrate(_coupled_rhs, pre, x0, t0, t_end, dt)
    if not ok[0]:
        raise IntegrationDivergedError("supermodel integration diverged",
                                       time=float(fail_times[0]))
    states = out[0]  # (n_points, M, 4)
    subs = tuple(Trajectory(t0=t0, dt=dt, states=states[:, mu]) for mu in range(m))
    ensemble = Trajectory(t0=t0, dt=dt, states=states.mean(axis=1))
    return SupermodelRun(submodel_trajectories=subs, ensemble=ensemble)


def simulate_ensemble_batch(submodels, free_rows: np.ndarray, coupled_vars,
                            bounds, t0: float, t_end: float, dt: float,
                            record_times, eta_from_mu: bool = False):
    """Ensemble-average states at record_times for a batch of candidate
    coefficient rows; returns (values, ok) like dynamics.simulate_batch."""
    free_rows = np.atleast_2d(np.asarray(free_rows, dtype=float))
    m = len(submodels)
    coupling = _expand_free(free_rows, m, _var_indices(coupled_vars))
    pre = {"submodels": _submodel_pres(submodels, eta_from_mu),
           "coupling": coupling}
    x0 = np.broadcast_to(np.stack([p.initial_state() for p in submodels]),
                         (free_rows.shape[0], m, N_VARS))
    record_times = np.asarray(record_times, dtype=float)
    steps = np.rint((record_times - t0) / dt).astype(int)
    n_steps = _step_count(t0, t_end, dt)
    if (steps < 0).any() or (steps > n_steps).any():
        raise ConfigurationError("record_times outside the integration span")
    out, ok, _ = _integrate(_coupled_rhs, pre, np.array(x0), t0, t_end, dt,
                            record_steps=steps)
    return out.mean(axis=2), ok  # (B, n_times, 4)


# ---------------------------------------------------------------------------
# forecast loss

@dataclass(frozen=True)
class SumoErrorConfig:
    """Discounted squared-deviation loss: the observation window is split
    into n_intervals equal parts; within each, sample j of J gets weight
    gamma_discount**(j/J) (normalized per interval)."""

    n_intervals: int = 5
    gamma_discount: float = 0.5

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ConfigurationError("n_intervals must be >= 1")
        if not 0.0 < self.gamma_discount <= 1.0:
            raise ConfigurationError("gamma_discount must be in (0, 1]")


def _interval_weights(observations: SampledSeries, cfg: SumoErrorConfig):
    """Per-interval (sample indices, normalized discount weights).

    A sample exactly on a shared interval edge belongs to both intervals.
    """
    t_start, t_end = observations.window
    k = cfg.n_intervals
    length = (t_end - t_start) / k
    eps = 1e-9 * max(1.0, abs(t_end))
    groups = []
    for i in range(k):
        lo = t_start + i * length
        hi = lo + length
        idx = np.flatnonzero((observations.times >= lo - eps)
                             & (observations.times <= hi + eps))
        if idx.size == 0:
            raise ConfigurationError(
                f"interval {i} of {k} contains no observation samples")
        j_max = idx.size - 1
        if j_max == 0:
            w = np.ones(1)
        else:
            w = cfg.gamma_discount ** (np.arange(idx.size) / j_max)
        groups.append((idx, w / w.sum()))
    return groups


def sumo_error(ensemble: Trajectory, observations: SampledSeries,
               cfg: SumoErrorConfig = SumoErrorConfig()) -> float:
    """Average over intervals of the discount-weighted squared Euclidean
    deviation between the ensemble and the observations."""
    predicted = sample_window(ensemble, observations.window, observations.f)
    sq = np.sum((predicted.values - observations.values) ** 2, axis=1)
    return float(_sumo_error_from_sq(sq[None, :], observations, cfg)[0])


def _sumo_error_from_sq(sq_rows: np.ndarray, observations: SampledSeries,
                        cfg: SumoErrorConfig) -> np.ndarray:
    groups = _interval_weights(observations, cfg)
    total = np.zeros(sq_rows.shape[0])
    for idx, w in groups:
        total += sq_rows[:, idx] @ w
    return total / len(groups)


def sumo_error_rows(values_rows: np.ndarray, observations: SampledSeries,
                    cfg: SumoErrorConfig) -> np.ndarray:
    """Batch variant: values_rows is (B, f+1, 4) sampled at the observation
    timestamps; NaN rows come out as +inf."""
    diff = values_rows - observations.values[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    with np.errstate(invalid="ignore"):
        out = _sumo_error_from_sq(sq, observations, cfg)
    return np.where(np.isfinite(out), out, np.inf)


# ---------------------------------------------------------------------------
# coefficient training

@dataclass
class TrainResult:
    tensor: CouplingTensor
    loss: float
    trace: list              # per-generation best loss
    smc: inference.SmcResult
    evaluations: int


def train_coupling(submodels, observations: SampledSeries, bounds=DEFAULT_COUPLING_BOUNDS,
                   smc_cfg: inference.SmcConfig | None = None,
                   error_cfg: SumoErrorConfig = SumoErrorConfig(),
                   coupled_vars=DEFAULT_COUPLED_VARS, t0: float = 0.0,
                   dt: float = 0.05, eta_from_mu: bool = False,
                   use_rmse: bool = False) -> TrainResult:
    """Learn the free coupling coefficients with the sequential ABC sampler,
    scoring candidates by the discounted loss (or plain RMSE with
    use_rmse); submodel parameters are frozen.  Returns the overall
    minimum-distance particle as the trained tensor."""
    m = len(submodels)
    var_idx = _var_indices(coupled_vars)
    n_free = len(var_idx) * m * (m - 1) // 2
    lo, hi = bounds
    prior = inference.PriorBox(lo=np.full(n_free, float(lo)),
                               hi=np.full(n_free, float(hi)))
    if smc_cfg is None:
        smc_cfg = inference.SmcConfig(population_size=100, max_evaluations=2000)
    t_end = observations.window[1]

    def simulate_fn(free_rows):
        values, ok = simulate_ensemble_batch(
            submodels, free_rows, coupled_vars, bounds, t0, t_end, dt,
            observations.times, eta_from_mu=eta_from_mu)
        values[~ok] = np.nan
        return values

    if use_rmse:
        distance_fn = inference.rmse_rows
    else:
        def distance_fn(values_rows, _obs):
            return sumo_error_rows(values_rows, observations, error_cfg)

    # track the overall minimum-distance candidate across every evaluation;
    # it is the returned point estimate
    best_free = None
    best_loss = math.inf

    def tracked_distance(values_rows, obs):
        nonlocal best_free, best_loss
        d = distance_fn(values_rows, obs)
        if len(d):
            i = int(np.argmin(d))
            if d[i] < best_loss:
                best_loss = float(d[i])
                best_free = np.array(tracked_distance.last_rows[i])
        return d

    def wrapped_simulate(free_rows):
        tracked_distance.last_rows = free_rows
        return simulate_fn(free_rows)

    result = inference.abc_smc(prior, wrapped_simulate, observations.values,
                               smc_cfg, distance_fn=tracked_distance)
    if best_free is None:
        raise ConfigurationError("no coupling candidate was ever evaluated")
    trace = [g.best_distance for g in result.generations]
    tensor = CouplingTensor.from_free(best_free, m, coupled_vars, bounds)
    return TrainResult(tensor=tensor, loss=best_loss, trace=trace,
                       smc=result, evaluations=result.evaluations)


# ---------------------------------------------------------------------------
# nudged adaptation

@dataclass(frozen=True)
class NudgingConfig:
    """Gains and barrier settings for truth-nudged coefficient adaptation.

    gains: per-variable pull toward the ground-truth point; adaptation_rate
    scales the synchronization-error product; barrier terms of strength
    eps_barrier keep every off-diagonal coefficient strictly inside
    (delta_floor, c_max).
    """

    gains: tuple = (0.0, 0.0, 0.0, 0.0)
    adaptation_rate: float = 0.0
    eps_barrier: float = 1e-6
    c_max: float = 0.5
    delta_floor: float = 0.0

    def __post_init__(self):
        if len(self.gains) != N_VARS:
            raise ConfigurationError(f"need {N_VARS} per-variable gains")
        if any(g < 0 for g in self.gains):
            raise ConfigurationError("gains must be >= 0")
        if not self.delta_floor < self.c_max:
            raise ConfigurationError("need delta_floor < c_max")


def nudged_training_step(submodels, states, coupling, truth_point,
                         cfg: NudgingConfig, dt: float,
                         eta_from_mu: bool = False):
    """One RK4 step of the joint (states, coefficients) flow.

    States follow the coupled dynamics plus gains * (truth - state); each
    directed off-diagonal coefficient follows the synchronization-error
    product adaptation_rate * (x_nu - x_mu) * (truth - ensemble mean) with
    two repelling barrier terms.  The truth point is held constant over the
    step.  Raises BarrierError when any coefficient leaves the open barrier
    interval.
    """
    states = np.asarray(states, dtype=float)
    coupling = np.asarray(coupling, dtype=float)
    m = len(submodels)
    if states.shape != (m, N_VARS):
        raise ShapeMismatchError(f"states must be ({m}, {N_VARS})")
    if coupling.shape != (N_VARS, m, m):
        raise ShapeMismatchError(f"coupling must be ({N_VARS}, {m}, {m})")
    truth = np.asarray(truth_point, dtype=float)
    off = ~np.eye(m, dtype=bool)

    def check(c, label):
        vals = c[:, off]
        if (vals <= cfg.delta_floor).any() or (vals >= cfg.c_max).any():
            bad = float(vals[(vals <= cfg.delta_floor) | (vals >= cfg.c_max)][0])
            raise BarrierError(
                f"coefficient {bad:g} at or beyond a barrier "
                f"({cfg.delta_floor:g}, {cfg.c_max:g}) {label}")

    check(coupling, "before the step")
    pres = _submodel_pres(submodels, eta_from_mu)
    gains = np.asarray(cfg.gains, dtype=float)

    def rhs(s, c):
        ds = np.empty_like(s)
        for mu in range(m):
            ds[mu] = _handy_rhs(s[mu][None, :], pres[mu])[0]
        diff = s[None, :, :] - s[:, None, :]  # diff[mu, nu, i] = s_nu - s_mu
        ds += np.einsum("imn,mni->mi", c, diff)
        ds += gains[None, :] * (truth[None, :] - s)
        sync = truth - s.mean(axis=0)  # truth minus ensemble mean, per var
        dc = cfg.adaptation_rate * diff.transpose(2, 0, 1) * sync[:, None, None]
        if cfg.eps_barrier > 0:
            dc = dc - cfg.eps_barrier / (c - cfg.c_max) ** 2 \
                    + cfg.eps_barrier / (c - cfg.delta_floor) ** 2
        dc[:, ~off] = 0.0
        return ds, dc

    half = 0.5 * dt
    k1s, k1c = rhs(states, coupling)
    k2s, k2c = rhs(states + half * k1s, _checked(coupling + half * k1c, cfg, off))
    k3s, k3c = rhs(states + half * k2s, _checked(coupling + half * k2c, cfg, off))
    k4s, k4c = rhs(states + dt * k3s, _checked(coupling + dt * k3c, cfg, off))
    new_states = states + dt / 6.0 * (k1s + 2.0 * (k2s + k3s) + k4s)
    new_states = np.where(new_states < 1e-12, 0.0, new_states)
    new_coupling = coupling + dt / 6.0 * (k1c + 2.0 * (k2c + k3c) + k4c)
    check(new_coupling, "after the step")
    return new_states, new_coupling


def _checked(coupling, cfg: NudgingConfig, off) -> np.ndarray:
    vals = coupling[:, off]
    if (vals <= cfg.delta_floor).any() or (vals >= cfg.c_max).any():
        bad = float(vals[(vals <= cfg.delta_floor) | (vals >= cfg.c_max)][0])
        raise BarrierError(
            f"coefficient {bad:g} left the barrier interval "
            f"({cfg.delta_floor:g}, {cfg.c_max:g}) inside an integration stage")
    return coupling


# ---------------------------------------------------------------------------
# attractor distances

W_KIND = "W"
V_KIND = "V"
U_KIND = "U"


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric matrix square root with eigenvalues clamped at zero."""
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def attractor_distance(samples_a, samples_b, kind: str = W_KIND) -> float:
    """Gaussian-approximate distance between two attractor sample sets.

    W: Frechet/Wasserstein distance of the fitted Gaussians; V: the
    covariance term only (translation-invariant); U: Euclidean distance of
    the marginal deviation vectors.  With fewer samples than dimensions the
    covariance is rank-deficient; the distance is still computed with
    clamped eigenvalues, after a warning.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigurationError("both sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError("sample sets have different dimensions")
    dim = a.shape[1]
    if a.shape[0] <= dim or b.shape[0] <= dim:
        import warnings
        warnings.warn("fewer samples than dimensions: rank-deficient "
                      "covariance, eigenvalues clamped at 0", stacklevel=2)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1)) if a.shape[0] > 1 \
        else np.zeros((dim, dim))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1)) if b.shape[0] > 1 \
        else np.zeros((dim, dim))

    if kind == U_KIND:
        sig_a = np.sqrt(np.clip(np.diag(cov_a), 0.0, None))
        sig_b = np.sqrt(np.clip(np.diag(cov_b), 0.0, None))
        return float(np.linalg.norm(sig_b - sig_a))

    root_a = _sqrtm_psd(cov_a)
    cross = _sqrtm_psd(root_a @ cov_b @ root_a)
    trace_term = float(np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    trace_term = max(trace_term, 0.0)
    if kind == V_KIND:
        return math.sqrt(trace_term)
    if kind == W_KIND:
        return math.sqrt(float(np.sum((mu_b - mu_a) ** 2)) + trace_term)
    raise ConfigurationError(f"unknown distance kind {kind!r}; use W, V or U")
