"""Constrained stochastic maximizer.

The engine is a standard (mu/mu_w, lambda) evolution strategy with
rank-one plus rank-mu covariance adaptation and cumulative step-size
control.  It runs unconstrained in the raw coordinate space; constraints
enter only through the projection chain baked into the objective, so
every fitness evaluation sees a feasible point and the returned best is
feasible by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import NonFiniteObjectiveError
from .stimulus import Stimulus, sample_pink_noise

__all__ = [
    "SolverConfig",
    "SearchTrace",
    "TerminationReason",
    "ProjectedObjective",
    "sphere_objective",
    "default_population_size",
    "maximize",
    "minimize",
    "seeded_init",
    "write_trace_csv",
    "trace_to_json",
]

_MAX_SNAPSHOTS = 64


def default_population_size(n: int) -> int:
    return 4 + int(3 * np.log(n))


@dataclass(frozen=True)
class SolverConfig:
    """Run-level knobs for one search.

    ``max_evaluations`` is the hard budget (lambda times the generation
    count, plus one for the feasible start point).  ``population_size``
    of None means the dimension-dependent default.
    ``evaluation_repeats`` averages repeated calls per candidate for
    noisy objectives; the repeats all count against the budget.
    """

    max_evaluations: int
    population_size: int | None = None
    initial_step: float = 0.3
    step_tolerance: float = 1e-8
    stagnation_window: int = 20
    seed: int | np.random.SeedSequence = 0
    evaluation_repeats: int = 1

    def resolved_population_size(self, n: int) -> int:
        lam = self.population_size if self.population_size is not None else default_population_size(n)
        if lam < 2:
            raise ValueError(f"population size {lam} < 2")
        if self.max_evaluations < lam:
            raise ValueError("budget smaller than one generation")
        return lam


class TerminationReason(str, Enum):
    BUDGET = "budget"
    STEP_TOLERANCE = "step_tolerance"
    STAGNATION = "stagnation"


@dataclass
class SearchTrace:
    """Best-so-far history of one run.

    ``best_fitness_history`` holds (evaluations_used, objective value)
    pairs appended on every strict improvement; the value column is
    monotone in the direction of the search.  ``best_point_history``
    keeps a thinned subset of the corresponding iterates.
    """

    best_fitness_history: list[tuple[int, float]] = field(default_factory=list)
    best_point_history: list[tuple[int, np.ndarray]] = field(default_factory=list)
    termination_reason: TerminationReason | None = None
    evaluations_used: int = 0
    generations: int = 0

    def record(self, evaluations: int, fitness: float, point: np.ndarray) -> None:
        self.best_fitness_history.append((evaluations, fitness))
        self.best_point_history.append((evaluations, point.copy()))
        if len(self.best_point_history) > _MAX_SNAPSHOTS:
            # keep first, last, and every other one in between
            kept = self.best_point_history[:-1:2] + [self.best_point_history[-1]]
            self.best_point_history = kept

    @property
    def best_fitness(self) -> float:
        return self.best_fitness_history[-1][1]


@dataclass(frozen=True)
class ProjectedObjective:
    """A black-box fitness with its constraint chain attached.

    ``project_batch`` maps raw sample rows onto the feasible manifold,
    ``fitness_batch`` scores feasible rows.  The solver never sees an
    unprojected point's fitness.
    """

    height: int
    width: int
    energy: float
    project_batch: Callable[[np.ndarray], np.ndarray]
    fitness_batch: Callable[[np.ndarray], np.ndarray]

    def evaluate_batch(self, raw: np.ndarray) -> np.ndarray:
        return np.asarray(self.fitness_batch(self.project_batch(raw)), dtype=np.float64)

    def as_stimulus(self, raw: np.ndarray) -> Stimulus:
        feasible = self.project_batch(np.asarray(raw, dtype=np.float64)[None, :])[0]
        return Stimulus(values=feasible, height=self.height, width=self.width, energy=self.energy)


def sphere_objective(
    fitness_batch: Callable[[np.ndarray], np.ndarray],
    shape: tuple[int, int],
    energy: float = 1.0,
) -> ProjectedObjective:
    """Objective constrained to the energy sphere only."""

    def project(raw: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        return raw * (energy / norms)

    return ProjectedObjective(
        height=shape[0],
        width=shape[1],
        energy=energy,
        project_batch=project,
        fitness_batch=fitness_batch,
    )


class _Strategy:
    """Canonical CMA-ES state and update rules."""

    def __init__(self, x0: np.ndarray, sigma: float, lam: int, rng: np.random.Generator):
        n = x0.size
        self.n = n
        self.lam = lam
        self.rng = rng
        mu = lam // 2
        weights = np.log(lam / 2 + 0.5) - np.log(np.arange(1, mu + 1))
        self.weights = weights / weights.sum()
        self.mu = mu
        self.mueff = float(self.weights.sum() ** 2 / (self.weights**2).sum())

        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, np.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        self.lazy_gap_evals = lam / ((self.c1 + self.cmu) * n)

        self.xmean = x0.astype(np.float64).copy()
        self.sigma = float(sigma)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.cov = np.eye(n)
        self.eigenbasis = np.eye(n)
        self.scales = np.ones(n)
        self.invsqrt = np.eye(n)
        self.counteval = 0
        self.updated_eval = 0

    def _update_eigensystem(self) -> None:
        if self.counteval - self.updated_eval < self.lazy_gap_evals:
            return
        self.cov = (self.cov + self.cov.T) / 2
        eigvals, eigvecs = np.linalg.eigh(self.cov)
        floor = 1e-14 * float(np.trace(self.cov)) / self.n
        eigvals = np.maximum(eigvals, floor)
        self.scales = np.sqrt(eigvals)
        self.eigenbasis = eigvecs
        self.invsqrt = (eigvecs / self.scales) @ eigvecs.T
        self.updated_eval = self.counteval

    def ask(self) -> np.ndarray:
        self._update_eigensystem()
        z = self.rng.standard_normal((self.lam, self.n))
        y = (z * self.scales) @ self.eigenbasis.T
        return self.xmean + self.sigma * y

    def tell(self, points: np.ndarray, scores: np.ndarray) -> None:
        """Update state from a scored generation; higher score is better."""
        order = np.argsort(-scores, kind="stable")
        selected = points[order[: self.mu]]
        xold = self.xmean
        self.xmean = self.weights @ selected

        shift = (self.xmean - xold) / self.sigma
        self.ps = (1 - self.cs) * self.ps + np.sqrt(
            self.cs * (2 - self.cs) * self.mueff
        ) * (self.invsqrt @ shift)
        expected_decay = 1 - (1 - self.cs) ** (2 * self.counteval / self.lam)
        hsig = float(self.ps @ self.ps) / expected_decay / self.n < 2 + 4 / (self.n + 1)
        self.pc = (1 - self.cc) * self.pc + hsig * np.sqrt(
            self.cc * (2 - self.cc) * self.mueff
        ) * shift

        deviations = (selected - xold) / self.sigma
        rank_mu = deviations.T @ (self.weights[:, None] * deviations)
        discount = 1 - self.c1 - self.cmu + (1 - hsig) * self.c1 * self.cc * (2 - self.cc)
        self.cov = discount * self.cov + self.c1 * np.outer(self.pc, self.pc) + self.cmu * rank_mu

        step = (self.cs / self.damps) * (np.linalg.norm(self.ps) / self.chi_n - 1)
        self.sigma *= float(np.exp(min(1.0, step)))


def _run(
    objective: ProjectedObjective,
    x0: Stimulus,
    config: SolverConfig,
    sign: float,
) -> tuple[Stimulus, SearchTrace]:
    n = x0.size
    lam = config.resolved_population_size(n)
    repeats = config.evaluation_repeats
    rng = np.random.default_rng(config.seed)
    trace = SearchTrace()

    def score_batch(raw: np.ndarray) -> np.ndarray:
        values = objective.evaluate_batch(raw)
        for _ in range(repeats - 1):
            values = values + objective.evaluate_batch(raw)
        values = values / repeats
        if not np.all(np.isfinite(values)):
            err = NonFiniteObjectiveError("objective returned a non-finite value")
            err.trace = trace
            raise err
        return values

    strategy = _Strategy(x0.values, config.initial_step * x0.energy, lam, rng)

    f0 = float(score_batch(x0.values[None, :])[0])
    strategy.counteval = repeats
    trace.evaluations_used = repeats
    best_raw = x0.values.copy()
    best_score = sign * f0
    trace.record(trace.evaluations_used, f0, best_raw)

    stalled = 0
    reason = TerminationReason.BUDGET
    while True:
        if trace.evaluations_used + lam * repeats > config.max_evaluations:
            reason = TerminationReason.BUDGET
            break
        if strategy.sigma < config.step_tolerance * x0.energy:
            reason = TerminationReason.STEP_TOLERANCE
            break
        if stalled >= config.stagnation_window:
            reason = TerminationReason.STAGNATION
            break

        points = strategy.ask()
        fitness = score_batch(points)
        strategy.counteval += lam * repeats
        trace.evaluations_used = strategy.counteval
        trace.generations += 1
        scores = sign * fitness
        strategy.tell(points, scores)

        gen_best = int(np.argmax(scores))
        if scores[gen_best] > best_score:
            best_score = float(scores[gen_best])
            best_raw = points[gen_best].copy()
            trace.record(trace.evaluations_used, float(fitness[gen_best]), best_raw)
            stalled = 0
        else:
            stalled += 1

    trace.termination_reason = reason
    return objective.as_stimulus(best_raw), trace


def maximize(
    objective: ProjectedObjective, x0: Stimulus, config: SolverConfig
) -> tuple[Stimulus, SearchTrace]:
    """Maximize the objective from a feasible start point."""
    return _run(objective, x0, config, sign=1.0)


def minimize(
    objective: ProjectedObjective, x0: Stimulus, config: SolverConfig
) -> tuple[Stimulus, SearchTrace]:
    """Minimize the objective; the trace records the minimized values."""
    return _run(objective, x0, config, sign=-1.0)


def seeded_init(
    objective: ProjectedObjective,
    n_candidates: int,
    alpha_set: tuple[float, ...],
    rng: np.random.Generator,
) -> tuple[Stimulus, float, int]:
    """Pick the best of ``n_candidates`` shaped-noise stimuli.

    Candidates cycle through the spectral exponents in ``alpha_set``.
    The evaluations are not drawn from any solver budget; the count is
    returned so callers can report it separately.  Evaluation is chunked
    so conv-style objectives never see an oversized batch.
    """
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    candidates = np.empty((n_candidates, objective.height * objective.width))
    for i in range(n_candidates):
        alpha = alpha_set[i % len(alpha_set)]
        stim = sample_pink_noise(objective.height, objective.width, alpha, objective.energy, rng)
        candidates[i] = stim.values
    fitness = np.empty(n_candidates)
    for start in range(0, n_candidates, 64):
        fitness[start : start + 64] = objective.evaluate_batch(candidates[start : start + 64])
    if not np.all(np.isfinite(fitness)):
        raise NonFiniteObjectiveError("objective returned a non-finite value during seeding")
    best = int(np.argmax(fitness))
    return objective.as_stimulus(candidates[best]), float(fitness[best]), n_candidates


# ---------------------------------------------------------------------------
# trace serialization


def write_trace_csv(trace: SearchTrace, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("evaluations,best_fitness\n")
        for evaluations, fitness in trace.best_fitness_history:
            fh.write(f"{evaluations},{float(fitness)!r}\n")


def trace_to_json(trace: SearchTrace) -> dict:
    return {
        "best_fitness_history": [
            [int(e), float(f)] for e, f in trace.best_fitness_history
        ],
        "best_point_history": [
            {"evaluations": int(e), "point": [float(v) for v in p]}
            for e, p in trace.best_point_history
        ],
        "termination_reason": trace.termination_reason.value if trace.termination_reason else None,
        "evaluations_used": int(trace.evaluations_used),
        "generations": int(trace.generations),
    }


def write_trace_json(trace: SearchTrace, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(trace_to_json(trace), fh, indent=2, sort_keys=True)
        fh.write("\n")
