"""End-to-end acceptance checks; one pass/fail line per criterion is printed at the end."""

from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from metiblt.bench import cli
from metiblt.bench.experiments import (
    DESK_M1,
    DESK_SET_SIZE,
    ExperimentSpec,
    _truth,
    check_cost_ordering,
    e1_config,
    e2_config,
    make_sets,
    run_pe_sweep,
    run_reconciliation_sweep,
    trial_rng,
)
from metiblt.config import MetConfig
from metiblt.density import (
    Ensemble,
    ensemble_params,
    exact_params,
    load_threshold,
    prefix_threshold,
    punctured_threshold,
    step_profile,
)
from metiblt.design import REFERENCE, prefix_thresholds, reference_design
from metiblt.hashing import FixtureHasher, Hasher
from metiblt.iblt import Iblt, recover
from metiblt.protocol import run_protocol
from metiblt.reconcile import DifferenceIblt, modified_recover, recovery_order
from oracles import false_pure_rate, hypergraph_peel


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


@pytest.mark.criterion(1, "load thresholds of the two example ensembles")
@pytest.mark.parametrize("make, want", [(e1_config, 0.815), (e2_config, 0.935)], ids=["e1", "e2"])
def test_thresholds(make, want) -> None:
    eta, seconds = timed(load_threshold, make())
    assert abs(eta - want) <= 0.005
    assert seconds < 10


PREFIX_TARGETS = [0.7948, 0.7837, 0.7882, 0.8025, 0.8042, 0.7967, 0.7895, 0.7856,
                  0.7842, 0.7837, 0.7830, 0.7830]


@pytest.mark.criterion(2, "prefix thresholds of the extendable design")
def test_prefix_thresholds() -> None:
    got, seconds = timed(prefix_thresholds, REFERENCE, len(PREFIX_TARGETS))
    for i, (g, w) in enumerate(zip(got, PREFIX_TARGETS), start=1):
        assert abs(g - w) <= 0.003, f"types={i}: {g:.4f} vs {w}"
    assert seconds < 60


@pytest.mark.criterion(3, "ensemble parameters are exact")
def test_ensemble_parameters_exact() -> None:
    met1 = Ensemble(m=(1, 1), p=(0.25, 0.25, 0.5), degrees=((2, 0, 1), (2, 3, 3)))
    a_bar, lam = exact_params(met1)
    assert a_bar == [Fraction(1), Fraction(11, 4)]
    assert lam == [[Fraction(1, 2), Fraction(0), Fraction(1, 2)],
                   [Fraction(2, 11), Fraction(3, 11), Fraction(6, 11)]]
    params = ensemble_params(met1)
    assert np.abs(params.a_bar - [1.0, 2.75]).max() <= 1e-12
    assert np.abs(params.lam - [[0.5, 0, 0.5], [2 / 11, 3 / 11, 6 / 11]]).max() <= 1e-12


@pytest.mark.criterion(4, "Monte-Carlo failure brackets the thresholds")
def test_waterfall() -> None:
    start = time.perf_counter()
    for config, below, above in ((e1_config(), 0.785, 0.845), (e2_config(), 0.905, 0.965)):
        assert config.num_cells == 100_000
        table = run_pe_sweep(ExperimentSpec(grid=(below, above), seed=0, trials=50, config=config))
        pe = {x: row[3] for x, row in table.select(statistic="pe").items()}
        assert pe[below] < 1e-3, config.name
        assert pe[above] > 1e-1, config.name
    assert time.perf_counter() - start < 300


@pytest.mark.criterion(5, "worked examples replay exactly")
def test_worked_examples() -> None:
    z1, z2, z3, z4 = 0x11, 0x22, 0x33, 0x44
    one = MetConfig(m=(4,), p=(1.0,), degrees=((1,),))

    # graph representation: three pairs on four cells, peeling stalls
    h = FixtureHasher(one, {z1: (0, 3), z2: (0, 1), z3: (1, 3)})
    t = Iblt(one, h)
    t.insert_values([z1, z2, z3])
    assert t.counts.tolist() == [2, 2, 0, 2]
    assert recover(t) == ([], False)

    # difference table and modified recovery
    five = MetConfig(m=(5,), p=(1.0,), degrees=((1,),))
    h = FixtureHasher(five, {z1: (0, 1), z2: (0, 2), z3: (3, 4), z4: (0, 2, 3)})
    a, b = Iblt(five, h), Iblt(five, h)
    a.insert_values([z1, z2, z3])
    b.insert_values([z3, z4])
    d = DifferenceIblt.from_iblts(b, a)
    c3 = d.cell(2)
    assert c3.count == 0 and c3.value == z2 ^ z4
    diff, ok = modified_recover(d)
    assert ok
    assert {z.value for z in diff.only_in_a} == {z1, z2} and {z.value for z in diff.only_in_b} == {z4}
    order = [(z.value, s) for z, s in recovery_order(d)]
    assert set(order[:2]) == {(z1, -1), (z4, 1)} and order[2] == (z2, -1)

    # protocol: success after exactly three cells, the fourth never sent
    two = MetConfig(m=(2, 2), p=(1.0,), degrees=((1,), (1,)))
    h = FixtureHasher(two, {z1: (1, 2), z4: (1, 3), z2: (0, 2), z3: (0, 3)})
    diff, transcript = run_protocol([z1, z2, z3], [z2, z3, z4], two, hasher=h)
    assert transcript.outcome == "success" and transcript.cells_sent == 3
    assert {z.value for z in diff.only_in_a} == {z1} and {z.value for z in diff.only_in_b} == {z4}


def random_small_config(rng: np.random.Generator) -> MetConfig:
    d_c, d_d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    total = int(rng.integers(d_c * 3, 101))
    cuts = np.sort(rng.choice(np.arange(1, total), d_c - 1, replace=False)) if d_c > 1 else []
    m = tuple(int(x) for x in np.diff([0, *cuts, total]))
    w = rng.integers(1, 6, d_d).astype(float)
    p = [float(x) for x in w / w.sum()]
    p[-1] = 1.0 - math.fsum(p[:-1])
    rows = tuple(tuple(int(rng.integers(1 if i == 0 else 0, min(3, m[i]) + 1)) for _ in range(d_d))
                 for i in range(d_c))
    return MetConfig(m=m, p=tuple(p), degrees=rows, seed=int(rng.integers(2**63)))


@pytest.mark.criterion(6, "peeling agrees with brute-force hypergraph peeling")
def test_oracle_equivalence() -> None:
    rng = np.random.default_rng(6)
    for _ in range(1000):
        config = random_small_config(rng)
        n = int(rng.integers(0, 51))
        values = [int(v) for v in rng.choice(2**31, n, replace=False)]
        t = Iblt(config)
        t.insert_values(values)
        h = t.hasher
        want, want_ok = hypergraph_peel({v: h.index_vector(h.derive_key(v)) for v in values})
        pairs, ok = recover(t)
        assert ok == want_ok and {z.value for z in pairs} == want

        shared = int(rng.integers(0, 51 - n)) if n < 50 else 0
        common = [int(v) + 2**31 for v in rng.choice(2**31, shared, replace=False)]
        split = int(rng.integers(0, n + 1))
        set_a, set_b = common + values[:split], common + values[split:]
        a, b = Iblt(config), Iblt(config)
        a.insert_values(set_a)
        b.insert_values(set_b)
        diff, ok = modified_recover(DifferenceIblt.from_iblts(b, a))
        assert ok == want_ok
        got_a = {z.value for z in diff.only_in_a}
        got_b = {z.value for z in diff.only_in_b}
        assert got_a | got_b == want
        assert got_a <= set(values[:split]) and got_b <= set(values[split:])


@pytest.mark.criterion(7, "false purity and false acknowledgements are rare")
def test_failure_rate_bound() -> None:
    h = Hasher(MetConfig(m=(8,), p=(1.0,), degrees=((1,),), nu=16))
    passed, total = false_pure_rate(h, 10_000_000, np.random.default_rng(7))
    assert total >= 10**7
    assert passed / total <= 2 * 2.0**-16

    config = reference_design(DESK_M1, num_types=5)
    bad = 0
    for run in range(10_000):
        rng = trial_rng(7, 0, run)
        set_a, set_b = make_sets(rng, 200, int(rng.integers(0, 40)))
        run_config = config.with_seed(int(rng.integers(2**63)))
        diff, transcript = run_protocol(set_a, set_b, run_config, max_growth=6)
        if transcript.outcome == "success" and diff != _truth(run_config, set_a, set_b):
            bad += 1
    assert bad == 0


@pytest.mark.criterion(8, "communication cost ordering at desk scale")
def test_cost_ordering() -> None:
    grid = (10.0, 100.0, 500.0)
    # at delta=10 the mean sits ~0.45 cells under the band edge with a per-run spread of ~6 cells,
    # so the rateless MET mean is estimated from 1000 runs rather than the minimum of 100
    met = run_reconciliation_sweep(ExperimentSpec(
        grid=grid, seed=0, trials=1000, m_1=DESK_M1, set_size=DESK_SET_SIZE,
        schemes=("met-rateless", "difference-digest", "cpi")))
    regular = run_reconciliation_sweep(ExperimentSpec(
        grid=grid, seed=0, trials=100, set_size=DESK_SET_SIZE, schemes=("regular-rateless",)))
    table = met
    table.rows.extend(regular.rows)
    for scheme in ("met-rateless", "regular-rateless"):
        assert all(r[3] == 0 for r in table.select(scheme, "failure_rate").values())
    checks = check_cost_ordering(table)
    assert len(checks) == 7
    failed = [f"{c.name}: {c.detail}" for c in checks if not c.passed]
    assert not failed, failed


@pytest.mark.criterion(9, "reception-profile thresholds reduce to prefix thresholds")
def test_puncturing_identity() -> None:
    config = reference_design()
    f = np.asarray(config.m, dtype=float) / config.num_cells
    for i in range(1, config.d_c + 1):
        punctured = punctured_threshold(config, step_profile(config, i), tol=1e-9)
        prefix = prefix_threshold(config, i, tol=1e-9)
        assert abs(punctured - prefix * f[:i].sum()) <= 1e-6, i


CLI_RUNS = {
    "threshold": ["threshold", "--config", "e1", "--tol", "1e-3"],
    "pe-sweep": ["pe-sweep", "--loads", "0.7,0.9", "--cells", "3000", "--trials", "3"],
    "reconcile-sweep": ["reconcile-sweep", "--deltas", "10,50", "--set-size", "500", "--trials", "3"],
    "anneal": ["anneal", "--budget", "5"],
    "protocol-demo": ["protocol-demo", "--config", "design", "--delta", "12", "--set-size", "300"],
}


@pytest.mark.criterion(10, "command-line runs are byte-identical for a fixed seed")
@pytest.mark.parametrize("name", list(CLI_RUNS))
def test_cli_determinism(name, tmp_path, capsys) -> None:
    outputs = []
    for run in range(2):
        out = tmp_path / f"{run}.out"
        args = CLI_RUNS[name] + ["--seed", "3"]
        if name == "protocol-demo":
            assert cli.main(args) == 0
            outputs.append(capsys.readouterr().out.encode())
            continue
        if name == "anneal":
            args += ["--log", str(tmp_path / f"{run}.log")]
        for fmt in ("csv", "json") if name != "anneal" else ("json",):
            target = out.with_suffix(f".{fmt}")
            extra = ["--out", str(target)] + (["--format", fmt] if name != "anneal" else [])
            assert cli.main(args + extra) == 0
            outputs.append(target.read_bytes())
        if name == "anneal":
            outputs.append((tmp_path / f"{run}.log").read_bytes())
    half = len(outputs) // 2
    assert outputs[:half] == outputs[half:]
    assert all(outputs)
