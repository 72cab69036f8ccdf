"""Monte-Carlo experiments: recovery failure vs load, and reconciliation cost vs difference size.

Every trial draws from its own RNG stream seeded by (seed, grid point, trial),
so results do not depend on how trials are spread over worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from metiblt.bench.calibrate import digest_cells
from metiblt.bench.emit import Table
from metiblt.config import MetConfig, sizes_from_ratios
from metiblt.design import reference_design
from metiblt.hashing import Hasher
from metiblt.iblt import Iblt, recover_count
from metiblt.protocol import run_protocol
from metiblt.reconcile import SignedDifference

ESTIMATOR_BYTES = 15_000
CPI_POINT_BYTES = 10
SCHEMES = ("met-rateless", "regular-rateless", "difference-digest", "cpi")
DESK_M1 = 8
DESK_SET_SIZE = 10_000
FULL_SET_SIZE = 100_000


def e1_config(num_cells: int = 100_000, seed: int = 0) -> MetConfig:
    return MetConfig(m=sizes_from_ratios((1, 1, 1), num_cells), p=(0.2, 0.2, 0.6),
                     degrees=((1, 2, 1), (2, 1, 1), (1, 2, 1)), seed=seed, name="e1")


def e2_config(num_cells: int = 100_000, seed: int = 0) -> MetConfig:
    return MetConfig(m=sizes_from_ratios((1, 1), num_cells), p=(0.046, 0.427, 0.398, 0.129),
                     degrees=((6, 3, 1, 4), (14, 0, 2, 6)), seed=seed, name="e2")


def regular_config(m: int = 10_000, k: int = 3, seed: int = 0) -> MetConfig:
    return MetConfig.regular(k, m, seed=seed, name=f"regular{k}")


BUILTIN: dict[str, Callable[..., MetConfig]] = {
    "e1": e1_config,
    "e2": e2_config,
    "design": lambda seed=0: reference_design(50, seed=seed),
    "regular3": regular_config,
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep. ``grid`` holds loads for P_e sweeps and differences for cost sweeps."""

    grid: tuple[float, ...]
    seed: int
    trials: int = 50
    config: MetConfig | None = None
    num_cells: int = 100_000
    m_1: int = DESK_M1
    set_size: int = DESK_SET_SIZE
    regular_cells: int = 10_000
    cell_bytes: int = 12
    schemes: tuple[str, ...] = SCHEMES
    workers: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.grid:
            raise ValueError("grid must not be empty")
        unknown = set(self.schemes) - set(SCHEMES)
        if unknown:
            raise ValueError(f"unknown schemes: {sorted(unknown)}")


def trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, point, trial]))


def wilson(successes: float, total: float, z: float = 1.96) -> tuple[float, float]:
    if total <= 0:
        return 0.0, 1.0
    phat = successes / total
    denom = 1 + z * z / total
    centre = (phat + z * z / (2 * total)) / denom
    half = z * math.sqrt(phat * (1 - phat) / total + z * z / (4 * total * total)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def mean_ci(samples: Sequence[float], z: float = 1.96) -> tuple[float, float, float]:
    x = np.asarray(samples, dtype=float)
    mean = float(x.mean())
    if x.size < 2:
        return mean, mean, mean
    half = z * float(x.std(ddof=1)) / math.sqrt(x.size)
    return mean, mean - half, mean + half


def _map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


# load sweep

def _pe_trial(task) -> tuple[int, int]:
    config, n, seed, point, trial = task
    rng = trial_rng(seed, point, trial)
    if n == 0:
        return 0, 0
    values = rng.choice(2**config.kappa, size=n, replace=False).astype(np.uint64)
    iblt = Iblt(config.with_seed(int(rng.integers(2**63))))
    iblt.insert_values(values)
    found, _ = recover_count(iblt)
    return n - found, n


def run_pe_sweep(spec: ExperimentSpec) -> Table:
    """Fraction of pairs left unrecovered after peeling, per load."""
    config = spec.config or e1_config(spec.num_cells)
    m = config.num_cells
    table = Table("load", meta={"experiment": "pe-sweep", "config": config.to_dict(),
                                "trials": spec.trials, "seed": spec.seed, **spec.meta})
    for point, eta in enumerate(spec.grid):
        n = round(eta * m)
        tasks = [(config, n, spec.seed, point, t) for t in range(spec.trials)]
        results = _map(_pe_trial, tasks, spec.workers)
        lost = sum(r[0] for r in results)
        total = sum(r[1] for r in results)
        pe = lost / total if total else 0.0
        lo, hi = wilson(lost, total) if total else (0.0, 0.0)
        table.add(float(eta), config.name or "config", "pe", pe, lo, hi)
        failures = sum(r[0] > 0 for r in results)
        table.add(float(eta), config.name or "config", "failure_rate", failures / spec.trials,
                  *wilson(failures, spec.trials))
    return table


# reconciliation sweep

def make_sets(rng: np.random.Generator, set_size: int, delta: int) -> tuple[np.ndarray, np.ndarray]:
    """Host sets of 32-bit values: A has ceil(delta/2) extras, B floor(delta/2)."""
    a_only = -(-delta // 2)
    b_only = delta // 2
    shared = set_size - a_only
    if shared < 0:
        raise ValueError("difference larger than the set")
    vals = rng.choice(2**32, size=shared + a_only + b_only, replace=False).astype(np.uint64)
    return vals[:shared + a_only], np.concatenate([vals[:shared], vals[shared + a_only:]])


def _truth(config: MetConfig, set_a: np.ndarray, set_b: np.ndarray) -> SignedDifference:
    h = Hasher(config)
    a, b = set(set_a.tolist()), set(set_b.tolist())
    return SignedDifference(frozenset(h.pair(v) for v in b - a), frozenset(h.pair(v) for v in a - b))


def _met_trial(task) -> tuple[int, int, bool]:
    scheme, config, set_size, delta, seed, point, trial, oracle = task
    rng = trial_rng(seed, point, trial)
    set_a, set_b = make_sets(rng, set_size, delta)
    config = config.with_seed(int(rng.integers(2**63)))
    truth = _truth(config, set_a, set_b)
    kwargs = {}
    if oracle:
        # no receiver-side stopping rule: stop the first time the decoded difference is right
        kwargs = {"min_cells": 1, "accept": lambda d: d == truth}
    growth = 12 if config.extendable else 0
    diff, transcript = run_protocol(set_a, set_b, config, max_growth=growth, **kwargs)
    ok = transcript.outcome == "success" and diff == truth
    return transcript.cell_bytes, transcript.bytes_sent, ok


def run_reconciliation_sweep(spec: ExperimentSpec) -> Table:
    """Mean bytes to reconcile, per difference size and scheme."""
    met = spec.config or reference_design(spec.m_1)
    regular = regular_config(spec.regular_cells)
    table = Table("delta", meta={"experiment": "reconcile-sweep", "set_size": spec.set_size,
                                 "trials": spec.trials, "seed": spec.seed,
                                 "met_config": met.to_dict(), "regular_cells": spec.regular_cells,
                                 **spec.meta})
    for point, delta in enumerate(spec.grid):
        delta = int(delta)
        for scheme in spec.schemes:
            if scheme in ("met-rateless", "regular-rateless"):
                config = met if scheme == "met-rateless" else regular
                oracle = scheme == "regular-rateless"
                tasks = [(scheme, config, spec.set_size, delta, spec.seed, point, t, oracle)
                         for t in range(spec.trials)]
                results = _map(_met_trial, tasks, spec.workers)
                table.add(delta, scheme, "mean_bytes", *mean_ci([r[0] for r in results]))
                table.add(delta, scheme, "mean_total_bytes", *mean_ci([r[1] for r in results]))
                fails = sum(not r[2] for r in results)
                table.add(delta, scheme, "failure_rate", fails / spec.trials, *wilson(fails, spec.trials))
            elif scheme == "difference-digest":
                b = ESTIMATOR_BYTES + digest_cells(delta) * spec.cell_bytes
                table.add(delta, scheme, "mean_bytes", b, b, b)
            else:
                b = CPI_POINT_BYTES * delta
                table.add(delta, scheme, "mean_bytes", b, b, b)
    return table


@dataclass(frozen=True)
class CostCheck:
    name: str
    passed: bool
    detail: str


def check_cost_ordering(table: Table, threshold: float = 0.78, floor: float = 0.80,
                        margin: float = 1.4, regular_factor: float = 5.0) -> list[CostCheck]:
    """Ordering and magnitude checks on a reconciliation table."""
    met = table.select("met-rateless", "mean_bytes")
    dd = table.select("difference-digest", "mean_bytes")
    reg = table.select("regular-rateless", "mean_bytes")
    out = []
    for delta, row in sorted(met.items()):
        b = row[3]
        if delta in dd:
            out.append(CostCheck(f"met<=digest@{delta:g}", b <= dd[delta][3],
                                 f"{b:.1f} vs {dd[delta][3]:.1f}"))
        lo, hi = 12 * delta / floor, margin * 12 * delta / threshold
        out.append(CostCheck(f"met-band@{delta:g}", lo <= b <= hi, f"{b:.1f} in [{lo:.1f}, {hi:.1f}]"))
    smallest = min(met) if met else None
    if smallest is not None and smallest in reg:
        r = reg[smallest][3]
        out.append(CostCheck(f"regular>={regular_factor:g}x@{smallest:g}",
                             r >= regular_factor * met[smallest][3], f"{r:.1f} vs {met[smallest][3]:.1f}"))
    return out
