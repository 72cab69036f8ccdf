"""Density evolution for MET IBLT ensembles and load-threshold search.

Messages are erasure probabilities on the bipartite graph between cells and
pairs. A cell of type ``i`` has Poisson degree with mean ``(load / f_i) * a_bar_i``
where ``f_i`` is its share of all cells, so its outgoing message is erased with
probability ``1 - exp(-(load / f_i) * a_bar_i * p_bar_i)``. A pair's message
into a type-``i`` cell is erased when all its other cells are.

The iteration budget is deliberately short (400 rounds by default). Near the
threshold DE crawls through a bottleneck for thousands of rounds; a short
budget counts those loads as infeasible, which matches the finite-length
thresholds published for the reference ensembles. Raise ``max_iter`` for the
asymptotic values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numba
import numpy as np

from metiblt.config import MetConfig

ETA_LOW = 1e-3


class NoThresholdError(ValueError):
    """DE fails even at a vanishing load."""


@dataclass(frozen=True)
class Ensemble:
    """Just what DE needs: cell-type sizes (or ratios), p and the degree matrix.

    Unlike :class:`MetConfig` it allows data types that skip the first cell
    type; such ensembles can be analysed but not used by the protocol.
    """

    m: tuple[float, ...]
    p: tuple[float, ...]
    degrees: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", tuple(float(v) for v in self.m))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        object.__setattr__(self, "degrees", tuple(tuple(int(a) for a in row) for row in self.degrees))
        if any(v <= 0 for v in self.m) or len(self.degrees) != len(self.m):
            raise ValueError("need one positive size and one degree row per cell type")
        if any(x < 0 for x in self.p) or abs(math.fsum(self.p) - 1.0) > 1e-12:
            raise ValueError("p must be a probability vector")
        if any(len(row) != len(self.p) or min(row) < 0 for row in self.degrees):
            raise ValueError("degree rows need one non-negative entry per data type")

    @classmethod
    def of(cls, config: MetConfig | Ensemble) -> Ensemble:
        if isinstance(config, Ensemble):
            return config
        return cls(config.m, config.p, config.degrees)

    @property
    def d_c(self) -> int:
        return len(self.m)

    def truncated(self, num_types: int) -> Ensemble:
        if not 1 <= num_types <= self.d_c:
            raise ValueError(f"cannot keep {num_types} of {self.d_c} cell types")
        return Ensemble(self.m[:num_types], self.p, self.degrees[:num_types])


@dataclass(frozen=True)
class EnsembleParams:
    config: Ensemble
    f: np.ndarray
    a_bar: np.ndarray
    lam: np.ndarray
    unused: tuple[int, ...] = ()


def ensemble_params(config: MetConfig | Ensemble) -> EnsembleParams:
    """Cell shares, average cell degree per pair, and edge fractions per cell type."""
    config = Ensemble.of(config)
    degrees = np.array(config.degrees, dtype=np.int64)
    p = np.array(config.p, dtype=float)
    m = np.array(config.m, dtype=float)
    a_bar = degrees @ p
    lam = np.zeros(degrees.shape, dtype=float)
    used = a_bar > 0
    lam[used] = degrees[used] * p[None, :] / a_bar[used, None]
    unused = tuple(int(i) for i in np.nonzero(~used)[0])
    return EnsembleParams(config, m / m.sum(), a_bar, lam, unused)


def exact_params(config: MetConfig | Ensemble) -> tuple[list[Fraction], list[list[Fraction]]]:
    """``a_bar`` and edge fractions in rational arithmetic (p read as decimals)."""
    p = [Fraction(str(x)) for x in config.p]
    a_bar = [sum((Fraction(a) * pj for a, pj in zip(row, p)), Fraction(0)) for row in config.degrees]
    lam = [[Fraction(a) * pj / ab if ab else Fraction(0) for a, pj in zip(row, p)]
           for row, ab in zip(config.degrees, a_bar)]
    return a_bar, lam


@dataclass(frozen=True)
class DeState:
    q: np.ndarray
    p_avg: np.ndarray
    gamma: np.ndarray
    iteration: int = 0

    @classmethod
    def initial(cls, params: EnsembleParams) -> DeState:
        dc, dd = params.lam.shape
        return cls(np.ones(dc), np.ones(dc), np.ones(dd), 0)


@dataclass(frozen=True)
class DeParams:
    max_iter: int = 400
    change_tol: float = 1e-12
    gamma_tol: float = 1e-8
    eta_max: float = 1.5


ASYMPTOTIC = DeParams(max_iter=100_000)


@numba.njit(cache=True)
def cell_update(eta: float, f_i: float, a_bar_i: float, p_avg_i: float, r_i: float) -> float:
    """Erasure probability of a type-i cell's outgoing message.

    An unreceived cell (probability ``1 - r_i``) always sends an erasure.
    """
    if a_bar_i <= 0.0:
        return 1.0
    return 1.0 - r_i * math.exp(-(eta / f_i) * a_bar_i * p_avg_i)


def de_step(state: DeState, params: EnsembleParams, eta: float,
            reception: Sequence[float] | None = None) -> DeState:
    """One round: cell update from ``p_avg``, then pair updates from the new ``q``.

    Plain numpy; the threshold search uses the compiled kernel below.
    """
    degrees = np.array(params.config.degrees, dtype=np.int64)
    r = np.ones(len(params.f)) if reception is None else np.asarray(reception, dtype=float)
    q = np.array([cell_update(eta, params.f[i], params.a_bar[i], state.p_avg[i], r[i])
                  for i in range(len(params.f))])
    gamma = data_node_erasure(q, degrees)
    p_avg = np.empty_like(q)
    for i in range(len(q)):
        b = degrees.copy()
        b[i] = np.maximum(b[i] - 1, 0)
        p_ij = np.prod(q[:, None] ** b, axis=0)
        p_avg[i] = params.lam[i] @ p_ij if params.a_bar[i] > 0 else 1.0
    return DeState(q, p_avg, gamma, state.iteration + 1)


def data_node_erasure(q: np.ndarray | DeState, degrees) -> np.ndarray:
    """Probability that a pair of each type is never recovered: prod_i q_i^alpha_ij."""
    if isinstance(q, DeState):
        q = q.q
    degrees = np.asarray(degrees, dtype=np.int64)
    return np.prod(np.asarray(q)[:, None] ** degrees, axis=0)


@numba.njit(cache=True)
def _evolve(eta, f, degrees, lam, a_bar, r, max_iter, change_tol, gamma_tol, q, p_avg, gamma):
    """Iterate in place; returns (feasible, rounds run)."""
    dc, dd = degrees.shape
    for it in range(max_iter):
        change = 0.0
        for i in range(dc):
            nq = cell_update(eta, f[i], a_bar[i], p_avg[i], r[i])
            d = abs(nq - q[i])
            if d > change:
                change = d
            q[i] = nq
        worst = 0.0
        for j in range(dd):
            g = 1.0
            for k in range(dc):
                for _ in range(degrees[k, j]):
                    g *= q[k]
            gamma[j] = g
            if g > worst:
                worst = g
        if worst < gamma_tol:
            return True, it + 1
        if change < change_tol and it > 0:
            return False, it + 1
        for i in range(dc):
            if a_bar[i] <= 0.0:
                p_avg[i] = 1.0
                continue
            s = 0.0
            for j in range(dd):
                if lam[i, j] == 0.0:
                    continue
                pij = 1.0
                for k in range(dc):
                    b = degrees[k, j] - 1 if k == i else degrees[k, j]
                    for _ in range(b):
                        pij *= q[k]
                s += lam[i, j] * pij
            p_avg[i] = s
    return False, max_iter


def evolve(params: EnsembleParams, eta: float, de: DeParams = DeParams(),
           reception: Sequence[float] | None = None) -> tuple[bool, DeState]:
    """Run DE from the all-erased start; True if every pair type is recovered."""
    dc, dd = params.lam.shape
    degrees = np.ascontiguousarray(np.array(params.config.degrees, dtype=np.int64))
    r = np.ones(dc) if reception is None else np.ascontiguousarray(reception, dtype=float)
    q, p_avg, gamma = np.ones(dc), np.ones(dc), np.ones(dd)
    ok, rounds = _evolve(float(eta), params.f, degrees, params.lam, params.a_bar, r,
                         de.max_iter, de.change_tol, de.gamma_tol, q, p_avg, gamma)
    return bool(ok), DeState(q, p_avg, gamma, int(rounds))


def _bisect(params: EnsembleParams, tol: float, de: DeParams, reception) -> float:
    if tol <= 0:
        raise ValueError("tol must be positive")
    # the feasibility probe is per received cell, so it scales with what arrives
    share = 1.0 if reception is None else float(np.dot(reception, params.f))
    if share <= 0 or not evolve(params, ETA_LOW * share, de, reception)[0]:
        raise NoThresholdError("no positive threshold: DE fails at load 1e-3 per received cell")
    lo, hi = 0.0, de.eta_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if evolve(params, mid, de, reception)[0]:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def load_threshold(config: MetConfig | Ensemble, tol: float = 1e-4, de: DeParams = DeParams()) -> float:
    """Largest load at which DE drives every pair type's erasure below ``gamma_tol``."""
    return _bisect(ensemble_params(config), tol, de, None)


def prefix_threshold(config: MetConfig | Ensemble, num_types: int, tol: float = 1e-4,
                     de: DeParams = DeParams()) -> float:
    """Threshold when only the first ``num_types`` cell types exist.

    Load is measured against the cells in those types.
    """
    return load_threshold(Ensemble.of(config).truncated(num_types), tol, de)


def punctured_threshold(config: MetConfig | Ensemble, reception: Sequence[float], tol: float = 1e-4,
                        de: DeParams = DeParams()) -> float:
    """Threshold when only a fraction ``reception[i]`` of type-i cells arrives.

    Load is measured against all cells of the configuration.
    """
    r = np.asarray(reception, dtype=float)
    if r.shape != (config.d_c,):
        raise ValueError(f"need one reception fraction per cell type ({config.d_c})")
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("reception fractions must lie in [0, 1]")
    return _bisect(ensemble_params(config), tol, de, r)


def step_profile(config: MetConfig | Ensemble, received_types: int) -> np.ndarray:
    """Reception profile with the first ``received_types`` types fully in, the rest absent."""
    r = np.zeros(config.d_c)
    r[:received_types] = 1.0
    return r


__all__ = [
    "ASYMPTOTIC",
    "DeParams",
    "DeState",
    "Ensemble",
    "EnsembleParams",
    "NoThresholdError",
    "cell_update",
    "data_node_erasure",
    "de_step",
    "ensemble_params",
    "evolve",
    "exact_params",
    "load_threshold",
    "prefix_threshold",
    "punctured_threshold",
    "step_profile",
]
