"""Finite-length sizing table for the difference-digest baseline.

For each difference size ``t`` on a grid, finds the smallest 3-regular IBLT
that lists ``t`` random pairs with success rate at least ``target``. Run as
``python -m metiblt.bench.calibrate`` to regenerate ``data/dd_sizing.json``.
"""

from __future__ import annotations

import argparse
import json
import math
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from metiblt.config import MetConfig
from metiblt.iblt import Iblt, recover_count

DEFAULT_GRID = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000)
HASHES = 3
DATA_FILE = "dd_sizing.json"


def success_rate(t: int, m: int, trials: int, seed: int) -> float:
    ok = 0
    config = MetConfig.regular(HASHES, m)
    for trial in range(trials):
        rng = np.random.default_rng([seed, t, trial])
        values = rng.choice(2**32, size=t, replace=False).astype(np.uint64)
        iblt = Iblt(config.with_seed(int(rng.integers(2**63))))
        iblt.insert_values(values)
        ok += recover_count(iblt)[1]
    return ok / trials


def minimal_cells(t: int, target: float, trials: int, seed: int) -> int:
    """Smallest m reaching ``target`` (binary search; trials share seeds across m)."""
    lo, hi = HASHES, max(HASHES + 1, 4 * t + 40)
    while success_rate(t, hi, trials, seed) < target:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if success_rate(t, mid, trials, seed) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate(grid=DEFAULT_GRID, target: float = 0.99, trials: int = 1000, seed: int = 0) -> dict:
    table = {}
    for t in grid:
        n = trials if t <= 1000 else max(100, trials // 5)
        table[str(t)] = minimal_cells(t, target, n, seed)
    return {"hashes": HASHES, "target": target, "trials": trials, "seed": seed,
            "oversize": 1.0, "cells": table}


@lru_cache(maxsize=1)
def load_table() -> dict:
    with resources.files("metiblt.bench").joinpath("data", DATA_FILE).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def digest_cells(t: int, table: dict | None = None) -> int:
    """Cells for a difference of ``t``; interpolates cells/t in log t between grid points."""
    table = table or load_table()
    points = sorted((int(k), v) for k, v in table["cells"].items())
    if t <= 0:
        return 0
    if t <= points[0][0]:
        return points[0][1]
    for (t0, m0), (t1, m1) in zip(points, points[1:]):
        if t == t1:
            return m1
        if t0 < t < t1:
            w = (math.log(t) - math.log(t0)) / (math.log(t1) - math.log(t0))
            ratio = (1 - w) * m0 / t0 + w * m1 / t1
            return math.ceil(ratio * t)
    t_last, m_last = points[-1]
    return math.ceil(m_last / t_last * t)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Regenerate the difference-digest sizing table.")
    parser.add_argument("--trials", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--target", type=float, default=0.99)
    parser.add_argument("--out", type=Path,
                        default=Path(__file__).resolve().parent / "data" / DATA_FILE)
    args = parser.parse_args(argv)
    table = calibrate(target=args.target, trials=args.trials, seed=args.seed)
    args.out.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(table["cells"]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
