"""Extendable MET ensembles and a simulated-annealing search over them.

An extendable design doubles the cell-type size with every new type
(``m_i = 2^(i-1) m_1``) and fixes the degree rows of the first few types; every
later type reuses the last fixed row. The search maximizes the worst prefix
threshold over the first eight types, so the receiver can decode early from
any prefix of whole types.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from metiblt.config import MetConfig
from metiblt.density import DeParams, Ensemble, NoThresholdError, prefix_threshold

MAX_DEGREE = 5
P_QUANTUM = 10_000  # p is searched in steps of 1e-4

REFERENCE_P = (0.1959, 0.1904, 0.6137)
REFERENCE_ROWS = ((3, 4, 2), (1, 4, 1), (1, 4, 1), (1, 4, 1), (1, 5, 1))


@dataclass(frozen=True)
class ExtendableDesign:
    """Type distribution plus the fixed degree rows; the last row repeats forever."""

    p: tuple[float, ...]
    rows: tuple[tuple[int, ...], ...]
    m_1: int = 50
    max_degree: int = MAX_DEGREE

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "rows", tuple(tuple(int(a) for a in r) for r in self.rows))
        if self.m_1 < 1:
            raise ValueError("m_1 must be >= 1")
        if not self.rows or any(len(r) != len(self.p) for r in self.rows):
            raise ValueError("each degree row needs one entry per data type")
        if any(a < 0 or a > self.max_degree for r in self.rows for a in r):
            raise ValueError(f"degrees must lie in [0, {self.max_degree}]")
        if any(a < 1 for a in self.rows[0]):
            raise ValueError("every data type needs at least one first-type cell")
        if any(x < 0 for x in self.p) or abs(math.fsum(self.p) - 1.0) > 1e-12:
            raise ValueError("p must be a probability vector")

    def degree_rows(self, num_types: int) -> tuple[tuple[int, ...], ...]:
        return tuple(self.rows[min(i, len(self.rows) - 1)] for i in range(num_types))

    def sizes(self, num_types: int) -> tuple[int, ...]:
        return tuple(self.m_1 << i for i in range(num_types))

    def ensemble(self, num_types: int) -> Ensemble:
        return Ensemble(self.sizes(num_types), self.p, self.degree_rows(num_types))

    def to_config(self, num_types: int = 8, seed: int = 0, nu: int = 32, kappa: int = 32,
                  name: str = "") -> MetConfig:
        return MetConfig(m=self.sizes(num_types), p=self.p, degrees=self.degree_rows(num_types),
                         seed=seed, nu=nu, kappa=kappa, extendable=True, name=name)

    @property
    def key(self) -> tuple:
        return (self.p, self.rows)


REFERENCE = ExtendableDesign(REFERENCE_P, REFERENCE_ROWS)


def reference_design(m_1: int = 50, num_types: int = 8, seed: int = 0, nu: int = 32,
                     kappa: int = 32) -> MetConfig:
    """The published extendable design; grows further through ``MetConfig.extended``."""
    design = ExtendableDesign(REFERENCE_P, REFERENCE_ROWS, m_1)
    return design.to_config(num_types, seed, nu, kappa, name="design")


def prefix_thresholds(design: ExtendableDesign, num_types: int = 8, tol: float = 1e-4,
                      de: DeParams = DeParams()) -> list[float]:
    ens = design.ensemble(num_types)
    return [prefix_threshold(ens, i, tol, de) for i in range(1, num_types + 1)]


class Objective:
    """Worst prefix threshold over types 1..probe_types, cached per design."""

    def __init__(self, probe_types: int = 8, tol: float = 1e-4, de: DeParams = DeParams()) -> None:
        self.probe_types = probe_types
        self.tol = tol
        self.de = de
        self.cache: dict[tuple, float] = {}
        self.evaluations = 0

    def __call__(self, design: ExtendableDesign) -> float:
        hit = self.cache.get(design.key)
        if hit is not None:
            return hit
        self.evaluations += 1
        try:
            value = min(prefix_thresholds(design, self.probe_types, self.tol, self.de))
        except NoThresholdError:
            value = 0.0
        self.cache[design.key] = value
        return value


@dataclass(frozen=True)
class AnnealSchedule:
    start_temperature: float = 0.01
    cooling: float = 0.995
    p_step: float = 0.01


@dataclass
class AnnealState:
    current: ExtendableDesign
    objective: float
    temperature: float
    best: ExtendableDesign
    best_objective: float
    history: list[tuple[int, float, float, float]] = field(default_factory=list)


def _quantize(p: Sequence[float]) -> tuple[float, ...]:
    """Round to multiples of 1e-4 summing to exactly one (largest remainder)."""
    w = np.asarray(p, dtype=float)
    exact = w / w.sum() * P_QUANTUM
    units = np.floor(exact).astype(int)
    short = P_QUANTUM - units.sum()
    for j in np.argsort(-(exact - units), kind="stable")[:short]:
        units[j] += 1
    return tuple(int(u) / P_QUANTUM for u in units)


def neighbor(design: ExtendableDesign, rng: np.random.Generator,
             p_step: float = 0.01) -> ExtendableDesign:
    """Perturb one p_j by +-p_step (then renormalize) or one degree by +-1."""
    while True:
        if rng.random() < 0.5:
            j = int(rng.integers(len(design.p)))
            p = list(design.p)
            p[j] = max(0.0, p[j] + (p_step if rng.random() < 0.5 else -p_step))
            if sum(p) <= 0:
                continue
            new_p = _quantize(p)
            if new_p == design.p:
                continue
            return ExtendableDesign(new_p, design.rows, design.m_1, design.max_degree)
        i = int(rng.integers(len(design.rows)))
        j = int(rng.integers(len(design.p)))
        a = design.rows[i][j] + (1 if rng.random() < 0.5 else -1)
        if a < (1 if i == 0 else 0) or a > design.max_degree:
            continue
        rows = [list(r) for r in design.rows]
        rows[i][j] = a
        return ExtendableDesign(design.p, tuple(tuple(r) for r in rows), design.m_1, design.max_degree)


def starting_design(num_rows: int = 5, num_data_types: int = 3) -> ExtendableDesign:
    """Uniform p and every degree 2: a neutral point to search from."""
    p = _quantize([1.0] * num_data_types)
    return ExtendableDesign(p, tuple((2,) * num_data_types for _ in range(num_rows)))


def anneal(initial: ExtendableDesign | None = None, budget: int = 2000, seed: int = 0,
           schedule: AnnealSchedule = AnnealSchedule(), objective: Objective | None = None,
           log: TextIO | None = None,
           on_step: Callable[[AnnealState], None] | None = None) -> tuple[ExtendableDesign, float]:
    """Metropolis search; ``budget`` counts objective evaluations of new designs.

    Deterministic for a given seed. Progress rows (evaluation, temperature,
    objective, best) go to ``log`` as CSV when given.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    design = initial if initial is not None else starting_design()
    objective = objective if objective is not None else Objective()
    rng = np.random.default_rng(seed)
    score = objective(design)
    state = AnnealState(design, score, schedule.start_temperature, design, score)
    writer = csv.writer(log, lineterminator="\n") if log is not None else None
    if writer is not None:
        writer.writerow(["evaluation", "temperature", "objective", "best"])
    done = 0
    stale = 0
    while done < budget:
        cand = neighbor(state.current, rng, schedule.p_step)
        before = objective.evaluations
        value = objective(cand)
        if objective.evaluations == before:
            # revisits cost nothing; stop if the neighborhood is exhausted
            stale += 1
            if stale > 10_000:
                break
        else:
            stale = 0
            done += 1
        gain = value - state.objective
        if gain >= 0 or rng.random() < math.exp(gain / max(state.temperature, 1e-300)):
            state.current, state.objective = cand, value
        if state.objective > state.best_objective:
            state.best, state.best_objective = state.current, state.objective
        if objective.evaluations != before:
            state.temperature *= schedule.cooling
            row = (done, state.temperature, state.objective, state.best_objective)
            state.history.append(row)
            if writer is not None:
                writer.writerow([row[0], f"{row[1]:.6g}", f"{row[2]:.6f}", f"{row[3]:.6f}"])
            if on_step is not None:
                on_step(state)
    return state.best, state.best_objective


__all__ = [
    "AnnealSchedule",
    "AnnealState",
    "ExtendableDesign",
    "Objective",
    "REFERENCE",
    "anneal",
    "neighbor",
    "prefix_thresholds",
    "reference_design",
    "starting_design",
]
