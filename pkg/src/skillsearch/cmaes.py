"""Plain (mu/mu_w, lambda) CMA-ES for maximizing black-box rewards.

Constants follow the usual published defaults. For ``d = 10`` they come out
as lambda = 10, mu = 5, mu_eff ~ 3.17, c_sigma ~ 0.28, d_sigma ~ 1.28,
c_c ~ 0.295, c_1 ~ 0.0153, c_mu ~ 0.0202; for the 350-dimensional joint-space
policies lambda = 21.

The update is rank based and the internal convention is maximization: the
best candidate is the one with the largest fitness. Non-finite fitnesses
(and objective exceptions in :func:`search`) rank below every finite value.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .kinematics import ContractError

log = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-20
SIGMA_FLOOR = 1e-20
CONDITION_WARNING = 1e14


@dataclass(frozen=True)
class Strategy:
    """Strategy constants derived from the dimension (and optionally lambda)."""

    dim: int
    popsize: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float

    @classmethod
    def default(cls, dim: int, popsize: int | None = None) -> "Strategy":
        if dim < 1:
            raise ContractError("dimension must be at least 1")
        lam = popsize if popsize is not None else 4 + int(math.floor(3 * math.log(dim)))
        if lam < 2:
            raise ContractError("population size must be at least 2")
        mu = lam // 2
        raw = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
        w = raw / raw.sum()
        w.setflags(write=False)
        mu_eff = 1.0 / float(np.sum(w ** 2))
        c_sigma = (mu_eff + 2) / (dim + mu_eff + 5)
        d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (dim + 1)) - 1) + c_sigma
        c_c = (4 + mu_eff / dim) / (dim + 4 + 2 * mu_eff / dim)
        c_1 = 2 / ((dim + 1.3) ** 2 + mu_eff)
        c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((dim + 2) ** 2 + mu_eff))
        chi_n = math.sqrt(dim) * (1 - 1 / (4 * dim) + 1 / (21 * dim ** 2))
        return cls(dim, lam, mu, w, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n)


@dataclass(frozen=True)
class CmaesState:
    """Search distribution ``N(mean, sigma^2 C)`` plus evolution paths.

    ``B`` and ``D`` hold the eigendecomposition ``C = B diag(D^2) B^T``
    used for sampling; they are refreshed on every :func:`tell`.
    """

    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    B: np.ndarray
    D: np.ndarray
    strategy: Strategy
    generation: int = 0
    nonfinite: int = 0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def popsize(self) -> int:
        return self.strategy.popsize

    @property
    def condition(self) -> float:
        return float((self.D.max() / self.D.min()) ** 2)


def initial_state(x0, sigma0: float, popsize: int | None = None) -> CmaesState:
    mean = np.array(x0, dtype=float).ravel()
    if mean.size == 0 or not np.all(np.isfinite(mean)):
        raise ContractError("x0 must be a non-empty finite vector")
    if not math.isfinite(sigma0) or sigma0 < 0:
        raise ContractError(f"sigma0 must be finite and non-negative, got {sigma0}")
    d = mean.size
    return CmaesState(mean=mean, sigma=max(float(sigma0), SIGMA_FLOOR), C=np.eye(d),
                      p_sigma=np.zeros(d), p_c=np.zeros(d), B=np.eye(d), D=np.ones(d),
                      strategy=Strategy.default(d, popsize))


def ask(state: CmaesState, rng: np.random.Generator) -> np.ndarray:
    """(lambda, d) candidates ``mean + sigma * B D z`` with standard normal ``z``."""
    z = rng.standard_normal((state.popsize, state.dim))
    return state.mean + state.sigma * (z * state.D) @ state.B.T


def ranking(fitnesses) -> np.ndarray:
    """Candidate indices from best to worst; ties keep index order, non-finite last."""
    f = np.asarray(fitnesses, dtype=float)
    key = np.where(np.isfinite(f), -f, np.inf)
    return np.argsort(key, kind="stable")


def tell(state: CmaesState, candidates, fitnesses) -> CmaesState:
    """Return the state after one generation of rank-based updates."""
    X = np.asarray(candidates, dtype=float)
    f = np.asarray(fitnesses, dtype=float)
    s = state.strategy
    if X.shape != (s.popsize, state.dim):
        raise ContractError(f"expected {s.popsize} candidates of dimension {state.dim}, got {X.shape}")
    if f.shape != (s.popsize,):
        raise ContractError(f"expected {s.popsize} fitness values, got {f.shape}")
    bad = int(np.count_nonzero(~np.isfinite(f)))
    if bad:
        log.warning("generation %d: %d non-finite fitness value(s) ranked worst", state.generation, bad)

    order = ranking(f)[:s.mu]
    Y = (X[order] - state.mean) / state.sigma
    y_w = s.weights @ Y
    mean = state.mean + state.sigma * y_w

    inv_sqrt_C_y = state.B @ ((state.B.T @ y_w) / state.D)
    p_sigma = (1 - s.c_sigma) * state.p_sigma + math.sqrt(s.c_sigma * (2 - s.c_sigma) * s.mu_eff) * inv_sqrt_C_y
    gen = state.generation + 1
    norm_ps = float(np.linalg.norm(p_sigma))
    h_sigma = norm_ps / math.sqrt(1 - (1 - s.c_sigma) ** (2 * gen)) / s.chi_n < 1.4 + 2 / (s.dim + 1)
    p_c = (1 - s.c_c) * state.p_c
    if h_sigma:
        p_c = p_c + math.sqrt(s.c_c * (2 - s.c_c) * s.mu_eff) * y_w

    delta_h = 0.0 if h_sigma else s.c_c * (2 - s.c_c)
    rank_mu = (Y.T * s.weights) @ Y
    C = ((1 - s.c_1 - s.c_mu + s.c_1 * delta_h) * state.C
         + s.c_1 * np.outer(p_c, p_c) + s.c_mu * rank_mu)
    C = 0.5 * (C + C.T)
    eigenvalues, B = np.linalg.eigh(C)
    if eigenvalues.min() < EIGEN_FLOOR:
        eigenvalues = np.maximum(eigenvalues, EIGEN_FLOOR)
        C = (B * eigenvalues) @ B.T
        C = 0.5 * (C + C.T)
    D = np.sqrt(eigenvalues)

    sigma = state.sigma * math.exp((s.c_sigma / s.d_sigma) * (norm_ps / s.chi_n - 1))
    if not math.isfinite(sigma):
        raise FloatingPointError("step size overflowed")
    new = replace(state, mean=mean, sigma=max(sigma, SIGMA_FLOOR), C=C, p_sigma=p_sigma, p_c=p_c,
                  B=B, D=D, generation=gen, nonfinite=state.nonfinite + bad)
    if new.condition > CONDITION_WARNING:
        log.warning("generation %d: covariance condition number %.3g", gen, new.condition)
    return new


@dataclass
class SearchResult:
    best_x: np.ndarray
    best_fitness: float
    history: np.ndarray  # running maximum after each evaluation
    fitnesses: np.ndarray  # raw fitness per evaluation, -inf where the objective raised
    state: CmaesState
    states: list[CmaesState] = field(default_factory=list)


Mapper = Callable[[Callable[[np.ndarray], float], Iterable[np.ndarray]], Iterable[float]]


def _safe(objective):
    def call(x):
        try:
            value = float(objective(x))
        except Exception as exc:  # treated as the worst possible outcome
            log.warning("objective raised %s: %s", type(exc).__name__, exc)
            return -math.inf
        return value if math.isfinite(value) else -math.inf
    return call


def search(objective: Callable[[np.ndarray], float], x0, sigma0: float, budget: int, seed: int,
           popsize: int | None = None, mapper: Mapper = map, keep_states: bool = False) -> SearchResult:
    """Run CMA-ES for exactly ``budget`` objective evaluations.

    Candidates of a generation are evaluated through ``mapper`` (``map`` by
    default, or e.g. ``executor.map``); the results are consumed in
    candidate order so the outcome does not depend on the mapper. A last
    partial generation is evaluated but never told.
    """
    if budget < 1:
        raise ContractError("budget must be at least one evaluation")
    state = initial_state(x0, sigma0, popsize)
    rng = np.random.default_rng(seed)
    safe = _safe(objective)
    fitness = np.empty(budget)
    best_x, best_f = None, -math.inf
    states = [state] if keep_states else []
    done = 0
    while done < budget:
        X = ask(state, rng)
        n = min(state.popsize, budget - done)
        values = np.fromiter(mapper(safe, list(X[:n])), dtype=float, count=n)
        fitness[done:done + n] = values
        i = ranking(values)[0]
        if best_x is None or values[i] > best_f:
            best_x, best_f = X[i].copy(), float(values[i])
        done += n
        if n == state.popsize:
            state = tell(state, X, values)
            if keep_states:
                states.append(state)
    return SearchResult(best_x, best_f, np.maximum.accumulate(fitness), fitness, state, states)


def optimize(objective: Callable[[np.ndarray], float], x0, sigma0: float, budget: int, seed: int,
             popsize: int | None = None, mapper: Mapper = map):
    """``(best_x, best_fitness, history)`` with ``history[k]`` the best of the first ``k+1`` episodes."""
    r = search(objective, x0, sigma0, budget, seed, popsize, mapper)
    return r.best_x, r.best_fitness, r.history


__all__: Sequence[str] = ("Strategy", "CmaesState", "SearchResult", "initial_state", "ask", "tell",
                          "ranking", "search", "optimize")
