"""Likelihood-free parameter estimation over boxed uniform priors: plain
rejection sampling, Markov-chain ABC, and an adaptive sequential sampler
with importance reweighting.

Simulators are batch functions: given an (n, k) array of parameter rows
they return an (n, ...) array of simulated datasets.  The default distance
is the root-mean-square error over all trailing axes, in raw variable
units.  Rows whose simulation fails may be returned as NaN; they are
treated as infinitely distant.

Determinism: rejection and MCMC consume a single seeded stream; the
sequential sampler derives an independent substream per (seed, generation,
attempt) so results do not depend on evaluation chunking and proposals may
be evaluated concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SampledSeries
from .errors import ConfigurationError, ShapeMismatchError, StagnationError

_DEFAULT_CHUNK = 2048


def rmse_distance(a: SampledSeries, b: SampledSeries) -> float:
    """Root-mean-square difference over all (point, variable) pairs, in raw
    variable units.  The two series must share timestamps and variables."""
    if a.values.shape != b.values.shape or not np.array_equal(a.times, b.times):
        raise ShapeMismatchError("sampled series have different timestamps or shapes")
    if a.variables != b.variables:
        raise ShapeMismatchError("sampled series cover different variables")
    return float(np.sqrt(np.mean((a.values - b.values) ** 2)))


def rmse_rows(simulated: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Rowwise RMSE of simulated (n, ...) against observed (...); NaN rows
    come out as +inf."""
    simulated = np.asarray(simulated, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if simulated.shape[1:] != observed.shape:
        raise ShapeMismatchError(
            f"simulated rows {simulated.shape[1:]} do not match observed "
            f"{observed.shape}")
    flat = (simulated - observed).reshape(simulated.shape[0], -1)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(np.mean(flat * flat, axis=1))
    return np.where(np.isfinite(out), out, np.inf)


@dataclass(frozen=True)
class PriorBox:
    """Independent uniform prior on a box; degenerate [c, c] intervals are
    point masses."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("lo and hi must be 1-D arrays of equal length")
        if (lo > hi).any():
            raise ConfigurationError("need lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def k(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + rng.random((n, self.k)) * self.widths

    def contains(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return ((theta >= self.lo) & (theta <= self.hi)).all(axis=1)

    def density(self) -> float:
        """Uniform density value inside the box; degenerate components
        contribute a unit factor."""
        widths = self.widths[self.widths > 0]
        return float(np.exp(-np.sum(np.log(widths)))) if widths.size else 1.0

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


def make_prior(center, half_width_fraction: float) -> PriorBox:
    """Box [c*(1-h), c*(1+h)] per component; zero-valued centers get the
    degenerate interval [0, 0]."""
    if not 0.0 < half_width_fraction < 1.0:
        raise ConfigurationError("half_width_fraction must be in (0, 1)")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    lo = center * (1.0 - half_width_fraction)
    hi = center * (1.0 + half_width_fraction)
    return PriorBox(lo=np.minimum(lo, hi), hi=np.maximum(lo, hi))


@dataclass
class Particle:
    theta: np.ndarray
    weight: float
    distance: float


@dataclass(frozen=True)
class SmcConfig:
    """Sequential sampler configuration.

    tolerance_schedule: explicit strictly decreasing tolerances; when None
    the schedule is adaptive, starting at +inf and taking the `quantile` of
    the previous generation's accepted distances, floored at
    target_epsilon.  The run stops once a completed generation's tolerance
    is at or below target_epsilon, or when max_evaluations is exhausted.
    """

    population_size: int
    tolerance_schedule: tuple | None = None
    quantile: float = 0.5
    kernel_scale: float = 1.0
    target_epsilon: float = 0.0
    max_evaluations: int | None = None
    max_generations: int = 1000
    rng_seed: int = 0
    stagnation_factor: int = 10_000

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigurationError("population_size must be >= 2")
        if self.tolerance_schedule is not None:
            sched = tuple(float(e) for e in self.tolerance_schedule)
            if not sched:
                raise ConfigurationError("explicit schedule must be non-empty")
            if any(b >= a for a, b in zip(sched, sched[1:])) or sched[-1] < 0:
                raise ConfigurationError(
                    "explicit schedule must be strictly decreasing and >= 0")
            object.__setattr__(self, "tolerance_schedule", sched)
        if not 0.0 < self.quantile < 1.0:
            raise ConfigurationError("quantile must be in (0, 1)")
        if self.kernel_scale <= 0:
            raise ConfigurationError("kernel_scale must be positive")
        if (self.tolerance_schedule is None and self.max_evaluations is None
                and self.target_epsilon <= 0):
            raise ConfigurationError(
                "need a stopping bound: explicit schedule, positive "
                "target_epsilon, or max_evaluations")


@dataclass
class RejectionResult:
    thetas: np.ndarray      # (n_accepted, k)
    distances: np.ndarray   # (n_accepted,)
    acceptance_rate: float
    evaluations: int

    @property
    def empty(self) -> bool:
        return self.thetas.shape[0] == 0


def abc_rejection(prior: PriorBox, simulate_fn, data, epsilon: float,
                  budget: int, seed: int = 0, distance_fn=None,
                  chunk_size: int = _DEFAULT_CHUNK) -> RejectionResult:
    """Draw `budget` i.i.d. parameter rows from the prior and keep those
    whose simulated data fall within epsilon of the observations.

    Zero acceptances is an empty result, not an error.
    """
    if epsilon < 0:
        raise ConfigurationError("epsilon must be >= 0")
    if budget < 1:
        raise ConfigurationError("budget must be >= 1")
    if distance_fn is None:
        distance_fn = rmse_rows
    rng = np.random.default_rng(seed)
    kept_thetas, kept_distances = [], []
    done = 0
    while done < budget:
        n = min(chunk_size, budget - done)
        thetas = prior.sample(rng, n)
        distances = distance_fn(np.asarray(simulate_fn(thetas)), data)
        mask = distances <= epsilon
        if mask.any():
            kept_thetas.append(thetas[mask])
            kept_distances.append(distances[mask])
        done += n
    if kept_thetas:
        thetas = np.concatenate(kept_thetas)
        distances = np.concatenate(kept_distances)
    else:
        thetas = np.empty((0, prior.k))
        distances = np.empty(0)
    return RejectionResult(thetas=thetas, distances=distances,
                           acceptance_rate=len(thetas) / budget,
                           evaluations=budget)


@dataclass
class McmcResult:
    chain: np.ndarray       # (chain_length, k)
    distances: np.ndarray   # (chain_length,) distance of the retained state
    acceptance_rate: float
    evaluations: int


def abc_mcmc(prior: PriorBox, simulate_fn, data, epsilon: float,
             proposal_scale, chain_length: int, seed: int = 0,
             distance_fn=None, initial=None) -> McmcResult:
    """Markov-chain sampler with a Gaussian random-walk proposal.

    A move is taken only when the simulated distance is within epsilon and
    the Metropolis ratio accepts; with the symmetric Gaussian kernel the
    kernel terms cancel, so inside a uniform prior the ratio is 1 and any
    proposal outside the support is rejected.
    """
    if chain_length < 1:
        raise ConfigurationError("chain_length must be >= 1")
    if distance_fn is None:
        distance_fn = rmse_rows
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float),
                            (prior.k,)).copy()
    rng = np.random.default_rng(seed)

    if initial is None:
        theta = prior.sample(rng, 1)[0]
    else:
        theta = np.asarray(initial, dtype=float)
        if not prior.contains(theta)[0]:
            raise ConfigurationError("initial state has zero prior density")
    current_d = float(distance_fn(np.asarray(simulate_fn(theta[None, :])), data)[0])

    chain = np.empty((chain_length, prior.k))
    dists = np.empty(chain_length)
    moves = 0
    evaluations = 1
    for i in range(chain_length):
        proposal = theta + scale * rng.standard_normal(prior.k)
        if prior.contains(proposal)[0]:
            d = float(distance_fn(np.asarray(simulate_fn(proposal[None, :])), data)[0])
            evaluations += 1
            if d <= epsilon:  # uniform prior + symmetric kernel: alpha = 1
                theta, current_d = proposal, d
                moves += 1
        chain[i] = theta
        dists[i] = current_d
    return McmcResult(chain=chain, distances=dists,
                      acceptance_rate=moves / chain_length,
                      evaluations=evaluations)


@dataclass
class GenerationReport:
    generation: int
    epsilon: float
    acceptance_rate: float
    evaluations: int
    best_distance: float = math.inf

    def as_dict(self) -> dict:
        return {"generation": self.generation, "epsilon": self.epsilon,
                "acceptance_rate": self.acceptance_rate,
                "evaluations": self.evaluations,
                "best_distance": self.best_distance}


@dataclass
class SmcResult:
    thetas: np.ndarray      # (N, k) final population
    weights: np.ndarray     # (N,) normalized
    distances: np.ndarray   # (N,)
    generations: list       # [GenerationReport]
    evaluations: int
    reached_target: bool
    budget_exhausted: bool

    def particles(self) -> list:
        return [Particle(theta=t, weight=float(w), distance=float(d))
                for t, w, d in zip(self.thetas, self.weights, self.distances)]

    def best_index(self) -> int:
        return int(np.argmin(self.distances))

    def posterior_mean(self) -> np.ndarray:
        return self.weights @ self.thetas

    def write_population_csv(self, path, names) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(names) + ",weight,distance\n")
            for t, w, d in zip(self.thetas, self.weights, self.distances):
                row = ",".join(f"{v:.17g}" for v in t)
                fh.write(f"{row},{w:.17g},{d:.17g}\n")


def _attempt_rng(seed: int, generation: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, generation, attempt)))


def _kernel_log_density(prev: np.ndarray, theta: np.ndarray,
                        sigma: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Log density of the per-parameter Gaussian random-walk kernel centred
    at each previous particle, over the active (non-degenerate) dims."""
    if not active.any():
        return np.zeros(prev.shape[0])
    z = (theta[active] - prev[:, active]) / sigma[active]
    const = np.sum(np.log(sigma[active])) + 0.5 * active.sum() * math.log(2 * math.pi)
    return -0.5 * np.sum(z * z, axis=1) - const


def abc_smc(prior: PriorBox, simulate_fn, data, cfg: SmcConfig,
            distance_fn=None, chunk_size: int = _DEFAULT_CHUNK) -> SmcResult:
    """Adaptive sequential sampler.

    Generation 0 samples the prior (tolerance +inf unless an explicit
    schedule is given) with unit weights.  Later generations resample the
    previous population by weight, perturb with a per-parameter Gaussian
    kernel whose deviation is kernel_scale times the weighted empirical
    deviation, reject zero-prior or over-tolerance draws, and reweight by
    prior density over the kernel mixture.  Raises StagnationError when a
    generation cannot be filled within stagnation_factor * N attempts.
    """
    if distance_fn is None:
        distance_fn = rmse_rows
    n_pop = cfg.population_size
    seed = cfg.rng_seed
    explicit = cfg.tolerance_schedule

    thetas = weights = distances = None
    reports: list = []
    evaluations = 0
    reached_target = False
    budget_exhausted = False
    sigma = None

    max_gens = len(explicit) if explicit is not None else cfg.max_generations
    for gen in range(max_gens):
        if explicit is not None:
            eps = explicit[gen]
        elif gen == 0:
            eps = math.inf
        else:
            eps = max(cfg.target_epsilon,
                      float(np.quantile(distances, cfg.quantile)))
            if reports and eps >= reports[-1].epsilon:
                break  # adaptive schedule can no longer decrease
        if gen > 0:
            sigma = cfg.kernel_scale * _weighted_std(thetas, weights)

        new_thetas = np.empty((n_pop, prior.k))
        new_raw_weights = np.empty(n_pop)
        new_distances = np.empty(n_pop)
        accepted = 0
        gen_evals = 0
        attempt = 0
        max_attempts = cfg.stagnation_factor * n_pop
        out_of_budget = False
        # proposal chunks are sized to the expected need; results do not
        # depend on the sizing (acceptances are taken in attempt order and
        # only attempts up to the final acceptance count toward the budget)
        rate_estimate = 1.0 if gen == 0 else max(reports[-1].acceptance_rate, 0.05)

        while accepted < n_pop:
            if attempt >= max_attempts:
                raise StagnationError(
                    f"generation {gen}: no complete population within "
                    f"{max_attempts} attempts", last_epsilon=_last_eps(reports))
            remaining_budget = (math.inf if cfg.max_evaluations is None
                                else cfg.max_evaluations - evaluations - gen_evals)
            if remaining_budget <= 0:
                out_of_budget = True
                break
            want = int(math.ceil(1.2 * (n_pop - accepted) / rate_estimate))
            n_chunk = int(min(max(want, 32), chunk_size,
                              max_attempts - attempt, remaining_budget))
            props = np.empty((n_chunk, prior.k))
            ok = np.ones(n_chunk, dtype=bool)
            parents = np.empty(n_chunk, dtype=int)
            for j in range(n_chunk):
                rng = _attempt_rng(seed, gen, attempt + j)
                if gen == 0:
                    props[j] = prior.lo + rng.random(prior.k) * prior.widths
                else:
                    parent = int(np.searchsorted(_cumw(weights), rng.random(),
                                                 side="right"))
                    parent = min(parent, n_pop - 1)
                    parents[j] = parent
                    props[j] = thetas[parent] + sigma * rng.standard_normal(prior.k)
                    ok[j] = bool(prior.contains(props[j])[0])
            # zero-prior proposals are rejected before simulation
            eval_idx = np.flatnonzero(ok)
            dvals = np.full(n_chunk, np.inf)
            if eval_idx.size:
                sim = np.asarray(simulate_fn(props[eval_idx]))
                dvals[eval_idx] = distance_fn(sim, data)
            for j in range(n_chunk):
                if not ok[j]:
                    attempt += 1
                    continue
                gen_evals += 1
                attempt += 1
                if dvals[j] <= eps and accepted < n_pop:
                    new_thetas[accepted] = props[j]
                    new_distances[accepted] = dvals[j]
                    if gen == 0:
                        new_raw_weights[accepted] = 1.0
                    else:
                        active = sigma > 0
                        log_k = _kernel_log_density(thetas, props[j], sigma, active)
                        mix = np.sum(weights * np.exp(log_k - log_k.max()))
                        log_mix = math.log(mix) + log_k.max()
                        new_raw_weights[accepted] = prior.density() * math.exp(-log_mix)
                    accepted += 1
                if accepted == n_pop:
                    break
            if attempt > 0:
                rate_estimate = max(accepted / attempt, 0.02)

        if out_of_budget and accepted < n_pop:
            evaluations += gen_evals
            budget_exhausted = True
            break

        thetas = new_thetas
        distances = new_distances
        weights = new_raw_weights / new_raw_weights.sum()
        evaluations += gen_evals
        reports.append(GenerationReport(
            generation=gen, epsilon=eps,
            acceptance_rate=n_pop / max(gen_evals, 1), evaluations=gen_evals,
            best_distance=float(distances.min())))
        if eps <= cfg.target_epsilon:
            reached_target = True
            break
        if cfg.max_evaluations is not None and evaluations >= cfg.max_evaluations:
            budget_exhausted = True
            break

    if thetas is None:
        raise StagnationError("no generation completed within the budget",
                              last_epsilon=math.inf)
    return SmcResult(thetas=thetas, weights=weights, distances=distances,
                     generations=reports, evaluations=evaluations,
                     reached_target=reached_target,
                     budget_exhausted=budget_exhausted)


def _last_eps(reports) -> float:
    return reports[-1].epsilon if reports else math.inf


def _cumw(weights: np.ndarray) -> np.ndarray:
    c = np.cumsum(weights)
    c[-1] = 1.0  # guard against rounding in the final bin
    return c


def _weighted_std(thetas: np.ndarray, weights: np.ndarray) -> np.ndarray:
    mean = weights @ thetas
    var = weights @ (thetas - mean) ** 2
    return np.sqrt(np.maximum(var, 0.0))
