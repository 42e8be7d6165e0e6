"""Variance-based global sensitivity analysis: radial sample design over a
Sobol' sequence, first/total/second-order index estimation with the Jansen
or Saltelli estimators, bootstrap confidence half-widths, and the scalar
society-quality output (GDP per capita).

Row layout convention: the model is evaluated on the stacked design rows
[A, B, AB_0..AB_{k-1}] (N*(k+2) rows) or, when second-order indices are
wanted, [A, B, AB_0..AB_{k-1}, BA_0..BA_{k-1}] (N*(2k+2) rows).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import qmc
from .dynamics import Trajectory
from .errors import ConfigurationError

JANSEN = "jansen"
SALTELLI = "saltelli"

# Variance below 1e-14 * (1 + f0^2) means the output is constant up to noise.
_DEGENERATE_REL = 1e-14


@dataclass(frozen=True)
class SaltelliDesign:
    """Base matrices A, B and the radial matrices AB_i (A with column i from
    B) and BA_i (B with column i from A), all scaled to the factor bounds.

    A and B come from disjoint halves of a 2k-dimensional low-discrepancy
    stream.  `seed` is recorded for provenance only; the point set is
    deterministic (no scrambling).
    """

    n: int
    k: int
    bounds: np.ndarray  # (k, 2)
    A: np.ndarray       # (N, k)
    B: np.ndarray       # (N, k)
    AB: np.ndarray      # (k, N, k)
    BA: np.ndarray      # (k, N, k)
    seed: int | None = None

    def rows(self, second_order: bool = True) -> np.ndarray:
        """Stacked evaluation rows: N*(2k+2) with second_order, N*(k+2)
        without."""
        blocks = [self.A, self.B, self.AB.reshape(-1, self.k)]
        if second_order:
            blocks.append(self.BA.reshape(-1, self.k))
        return np.concatenate(blocks, axis=0)

    def n_rows(self, second_order: bool = True) -> int:
        return self.n * (2 * self.k + 2) if second_order else self.n * (self.k + 2)


@dataclass
class SensitivityReport:
    """First-order and total indices with confidence half-widths, closed
    second-order pair indices, and the evaluation accounting."""

    factor_names: tuple
    s1: np.ndarray                 # (k,)
    st: np.ndarray                 # (k,)
    s1_conf: np.ndarray            # (k,) bootstrap half-widths (0 if not run)
    st_conf: np.ndarray            # (k,)
    s2: np.ndarray | None          # (k, k) symmetric, nan diagonal; None if absent
    variance: float
    mean: float
    evaluations: int
    estimator: str
    degenerate: bool = False

    def ranking(self) -> list:
        """Factor indices ordered by decreasing total effect."""
        return list(np.argsort(-self.st))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("factor,S1,S1_conf,ST,ST_conf\n")
            for i, name in enumerate(self.factor_names):
                fh.write(f"{name},{self.s1[i]:.17g},{self.s1_conf[i]:.17g},"
                         f"{self.st[i]:.17g},{self.st_conf[i]:.17g}\n")

    def write_pairs_csv(self, path) -> None:
        if self.s2 is None:
            raise ConfigurationError("no second-order indices in this report")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("i,j,S2\n")
            k = len(self.factor_names)
            for i in range(k):
                for j in range(i + 1, k):
                    fh.write(f"{self.factor_names[i]},{self.factor_names[j]},"
                             f"{self.s2[i, j]:.17g}\n")


def saltelli_design(k: int, n: int, bounds, seed: int | None = None) -> SaltelliDesign:
    """Build the radial design from n points of a 2k-dimensional Sobol'
    stream (origin skipped).  n should be a power of two; a warning is
    emitted otherwise."""
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    if 2 * k > qmc.MAX_DIMENSION:
        raise ConfigurationError(
            f"k={k} needs a {2 * k}-dimensional sequence; supported maximum "
            f"is {qmc.MAX_DIMENSION}")
    if n < 2:
        raise ConfigurationError("n must be >= 2")
    if n & (n - 1):
        warnings.warn(f"sample size {n} is not a power of two; the Sobol' "
                      "stream is best balanced at powers of two", stacklevel=2)
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (k, 2):
        raise ConfigurationError(f"bounds must be ({k}, 2)")
    if (bounds[:, 1] < bounds[:, 0]).any():
        raise ConfigurationError("each bound must satisfy lo <= hi")

    u = qmc.sobol_points(n, 2 * k)
    lo, span = bounds[:, 0], bounds[:, 1] - bounds[:, 0]
    A = lo + u[:, :k] * span
    B = lo + u[:, k:] * span
    AB = np.repeat(A[None, :, :], k, axis=0)
    BA = np.repeat(B[None, :, :], k, axis=0)
    for i in range(k):
        AB[i, :, i] = B[:, i]
        BA[i, :, i] = A[:, i]
    return SaltelliDesign(n=n, k=k, bounds=bounds, A=A, B=B, AB=AB, BA=BA, seed=seed)


class _Blocks(NamedTuple):
    fA: np.ndarray
    fB: np.ndarray
    fAB: np.ndarray            # (k, N)
    fBA: np.ndarray | None     # (k, N) or None


def _split_outputs(design: SaltelliDesign, outputs) -> _Blocks:
    outputs = np.asarray(outputs, dtype=float).ravel()
    n, k = design.n, design.k
    if len(outputs) == design.n_rows(second_order=True):
        with_ba = True
    elif len(outputs) == design.n_rows(second_order=False):
        with_ba = False
    else:
        raise ConfigurationError(
            f"got {len(outputs)} outputs; expected {design.n_rows(False)} or "
            f"{design.n_rows(True)} for N={n}, k={k}")
    bad = np.flatnonzero(~np.isfinite(outputs))
    if bad.size:
        raise ConfigurationError(
            f"non-finite outputs at rows {bad[:20].tolist()}"
            + ("..." if bad.size > 20 else ""))
    fA, fB = outputs[:n], outputs[n:2 * n]
    fAB = outputs[2 * n:2 * n + k * n].reshape(k, n)
    fBA = outputs[2 * n + k * n:].reshape(k, n) if with_ba else None
    return _Blocks(fA, fB, fAB, fBA)


def _estimate(blocks: _Blocks, estimator: str):
    """Returns (s1, st, s2, variance, mean, degenerate)."""
    fA, fB, fAB, fBA = blocks
    n = len(fA)
    k = fAB.shape[0]
    pooled = np.concatenate([fA, fB])
    f0 = pooled.mean()
    variance = pooled.var()
    if variance < _DEGENERATE_REL * (1.0 + f0 * f0):
        zeros = np.zeros(k)
        s2 = None
        if fBA is not None:
            s2 = np.zeros((k, k))
            np.fill_diagonal(s2, np.nan)
        return zeros, zeros.copy(), s2, variance, f0, True

    if estimator == JANSEN:
        v_first = variance - 0.5 * np.mean((fB[None, :] - fAB) ** 2, axis=1)
        st = 0.5 * np.mean((fA[None, :] - fAB) ** 2, axis=1) / variance
    elif estimator == SALTELLI:
        if fBA is None:
            raise ConfigurationError(
                "the Saltelli first-order estimator needs the full row layout "
                "(second-order rows included)")
        v_first = np.mean(fA[None, :] * fBA, axis=1) - f0 * f0
        v_rest = np.mean(fA[None, :] * fAB, axis=1) - f0 * f0
        st = 1.0 - v_rest / variance
    else:
        raise ConfigurationError(f"unknown estimator {estimator!r}")
    s1 = v_first / variance

    s2 = None
    if fBA is not None:
        s2 = np.full((k, k), np.nan)
        for i in range(k):
            for j in range(i + 1, k):
                # pair effect from the generalized Jansen difference, minus
                # the two embedded first-order parts
                tau = 0.5 * np.mean((fAB[i] - fAB[j]) ** 2)
                val = (tau - v_first[i] - v_first[j]) / variance
                s2[i, j] = s2[j, i] = val
    return s1, st, s2, variance, f0, False


def estimate_indices(design: SaltelliDesign, outputs, estimator: str = JANSEN,
                     factor_names=None) -> SensitivityReport:
    """Estimate sensitivity indices from model outputs aligned with
    design.rows().

    Negative first-order estimates are reported as-is; a near-zero output
    variance yields all-zero indices with the degenerate flag set.
    """
    blocks = _split_outputs(design, outputs)
    s1, st, s2, variance, mean, degenerate = _estimate(blocks, estimator)
    k = design.k
    names = tuple(factor_names) if factor_names else tuple(f"x{i}" for i in range(k))
    if len(names) != k:
        raise ConfigurationError(f"need {k} factor names")
    return SensitivityReport(
        factor_names=names, s1=s1, st=st,
        s1_conf=np.zeros(k), st_conf=np.zeros(k), s2=s2,
        variance=float(variance), mean=float(mean),
        evaluations=len(np.ravel(outputs)), estimator=estimator,
        degenerate=degenerate)


def bootstrap_confidence(design: SaltelliDesign, outputs, estimator: str = JANSEN,
                         n_boot: int = 100, confidence: float = 0.95,
                         seed: int = 0):
    """Bootstrap half-widths for S1 and ST.

    Resamples the N row-groups with replacement n_boot times, re-estimates,
    and reports the half-width of the central `confidence` interval.
    Returns (s1_half, st_half), each of shape (k,).
    """
    if n_boot < 50:
        raise ConfigurationError("need at least 50 bootstrap replicates")
    if not 0.0 < confidence < 1.0:
        raise ConfigurationError("confidence must be in (0, 1)")
    blocks = _split_outputs(design, outputs)
    rng = np.random.default_rng(seed)
    n = design.n
    s1_samples = np.empty((n_boot, design.k))
    st_samples = np.empty((n_boot, design.k))
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        resampled = _Blocks(
            blocks.fA[idx], blocks.fB[idx], blocks.fAB[:, idx],
            None if blocks.fBA is None else blocks.fBA[:, idx])
        s1_b, st_b, _, _, _, _ = _estimate(resampled, estimator)
        s1_samples[b] = s1_b
        st_samples[b] = st_b
    tail = 0.5 * (1.0 - confidence)
    qs = np.array([tail, 1.0 - tail])

    def half_widths(samples):
        lo, hi = np.quantile(samples, qs, axis=0)
        return 0.5 * (hi - lo)

    return half_widths(s1_samples), half_widths(st_samples)


def analyze(design: SaltelliDesign, outputs, estimator: str = JANSEN,
            factor_names=None, n_boot: int = 100, confidence: float = 0.95,
            seed: int = 0) -> SensitivityReport:
    """estimate_indices plus bootstrap confidence half-widths."""
    report = estimate_indices(design, outputs, estimator, factor_names)
    s1_half, st_half = bootstrap_confidence(design, outputs, estimator,
                                            n_boot, confidence, seed)
    report.s1_conf = s1_half
    report.st_conf = st_half
    return report


class GdpResult(NamedTuple):
    value: float
    extinct: bool


def gdp_measure(traj: Trajectory, horizon: float) -> GdpResult:
    """Wealth per head, w/(x_C + x_E), at the horizon time.

    Returns 0 flagged extinct when the total population is below 1e-12.
    """
    state = traj.state_at(horizon)
    return gdp_from_state(state)


def gdp_from_state(state) -> GdpResult:
    xC, xE, _, w = (float(v) for v in state)
    population = xC + xE
    if population < 1e-12:
        return GdpResult(0.0, True)
    return GdpResult(w / population, False)
