"""``metiblt`` command line.

Exit status: 0 on success, 1 on usage or I/O errors, 2 when ``--check``
assertions fail.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from metiblt.bench import experiments as ex
from metiblt.bench.emit import Table, emit
from metiblt.config import ConfigError, MetConfig, load_config, save_config, sizes_from_ratios
from metiblt.density import DeParams, NoThresholdError, prefix_threshold
from metiblt.design import AnnealSchedule, anneal
from metiblt.hashing import FixtureHasher
from metiblt.protocol import run_protocol


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        out = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _config(name_or_path: str | None, default: str) -> MetConfig:
    name = name_or_path or default
    if name in ex.BUILTIN:
        return ex.BUILTIN[name]()
    return load_config(name)


def _write(table: Table, args) -> None:
    text = emit(table, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)


def cmd_threshold(args) -> int:
    config = _config(args.config, "design")
    if args.types:
        if args.types > config.d_c:
            config = config.extended(args.types - config.d_c)
        else:
            config = config.truncated(args.types)
    de = DeParams(max_iter=args.max_iter)
    table = Table("types", meta={"experiment": "threshold", "config": config.to_dict(),
                                 "tol": args.tol, "max_iter": args.max_iter})
    label = config.name or Path(str(args.config)).stem
    for i in range(1, config.d_c + 1):
        try:
            eta = prefix_threshold(config, i, args.tol, de)
        except NoThresholdError:
            eta = 0.0
        table.add(i, label, "threshold", round(eta, 6))
    _write(table, args)
    return 0


def cmd_pe_sweep(args) -> int:
    config = _config(args.config, "e1")
    if args.cells:
        config = _rescale(config, args.cells)
    spec = ex.ExperimentSpec(grid=args.loads, seed=args.seed, trials=args.trials, config=config,
                             workers=args.workers)
    _write(ex.run_pe_sweep(spec), args)
    return 0


def _rescale(config: MetConfig, num_cells: int) -> MetConfig:
    return MetConfig(m=sizes_from_ratios(config.m, num_cells), p=config.p, degrees=config.degrees,
                     seed=config.seed, nu=config.nu, kappa=config.kappa,
                     extendable=config.extendable, name=config.name)


def cmd_reconcile_sweep(args) -> int:
    set_size = args.set_size or (ex.FULL_SET_SIZE if args.full_scale else ex.DESK_SET_SIZE)
    deltas = args.deltas or ((10, 100, 1000, 5000) if args.full_scale else (10, 100, 500))
    m_1 = args.m1 or (50 if args.full_scale else ex.DESK_M1)
    config = None
    if args.config:
        config = _config(args.config, "design")
    spec = ex.ExperimentSpec(grid=tuple(float(d) for d in deltas), seed=args.seed, trials=args.trials,
                             config=config, m_1=m_1, set_size=set_size, workers=args.workers,
                             schemes=tuple(args.schemes) if args.schemes else ex.SCHEMES)
    table = ex.run_reconciliation_sweep(spec)
    _write(table, args)
    if args.check:
        failed = False
        for c in ex.check_cost_ordering(table):
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}", file=sys.stderr)
            failed |= not c.passed
        return 2 if failed else 0
    return 0


def cmd_anneal(args) -> int:
    schedule = AnnealSchedule(start_temperature=args.temperature, cooling=args.cooling)
    log = open(args.log, "w", encoding="utf-8", newline="") if args.log else None
    try:
        design, value = anneal(budget=args.budget, seed=args.seed, schedule=schedule, log=log)
    finally:
        if log is not None:
            log.close()
    config = design.to_config(8, name=f"anneal-{args.seed}")
    if args.out:
        save_config(config, args.out)
    else:
        sys.stdout.write(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"objective {value:.4f}", file=sys.stderr)
    return 0


def _worked_example():
    config = MetConfig(m=(2, 2), p=(1.0,), degrees=((1,), (1,)), name="example")
    z1, z2, z3, z4 = 1, 2, 3, 4
    hasher = FixtureHasher(config, {z1: (1, 2), z4: (1, 3), z2: (0, 2), z3: (0, 3)})
    return config, hasher, [z1, z2, z3], [z2, z3, z4]


def cmd_protocol_demo(args) -> int:
    if args.config is None:
        config, hasher, set_a, set_b = _worked_example()
        diff, transcript = run_protocol(set_a, set_b, config, h=args.h, hasher=hasher)
    else:
        config = _config(args.config, "design")
        rng = ex.trial_rng(args.seed, 0, 0)
        set_a, set_b = ex.make_sets(rng, args.set_size, args.delta)
        diff, transcript = run_protocol(set_a, set_b, config, h=args.h,
                                        max_growth=12 if config.extendable else 0)
    print("\n".join(transcript.lines()))
    print(f"B learned {len(diff.only_in_a)} element(s) only A holds and "
          f"{len(diff.only_in_b)} only B holds")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metiblt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, trials: int) -> None:
        p.add_argument("--config", help="config JSON path or built-in name (e1, e2, design, regular3)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--trials", type=int, default=trials)
        p.add_argument("--out", type=Path)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--full-scale", action="store_true", help="sets of 10^5, m_1=50 and the wide difference grid")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("threshold", help="prefix load thresholds of a configuration")
    common(p, 1)
    p.add_argument("--types", type=int, help="number of cell types to analyse")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=DeParams().max_iter)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("pe-sweep", help="Monte-Carlo recovery failure vs load")
    common(p, 50)
    p.add_argument("--loads", type=_floats, default=(0.75, 0.77, 0.79, 0.81, 0.83, 0.85, 0.87))
    p.add_argument("--cells", type=int, help="total cells (default: the config's)")
    p.set_defaults(func=cmd_pe_sweep)

    p = sub.add_parser("reconcile-sweep", help="bytes to reconcile vs difference size")
    common(p, 100)
    p.add_argument("--deltas", type=lambda s: tuple(int(x) for x in _floats(s)))
    p.add_argument("--set-size", type=int)
    p.add_argument("--m1", type=int, help="first cell-type size of the MET design")
    p.add_argument("--schemes", type=lambda s: s.split(","))
    p.add_argument("--check", action="store_true", help="exit 2 unless cost ordering holds")
    p.set_defaults(func=cmd_reconcile_sweep)

    p = sub.add_parser("anneal", help="search for an extendable design")
    common(p, 1)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--temperature", type=float, default=AnnealSchedule().start_temperature)
    p.add_argument("--cooling", type=float, default=AnnealSchedule().cooling)
    p.add_argument("--log", type=Path, help="progress CSV")
    p.set_defaults(func=cmd_anneal)

    p = sub.add_parser("protocol-demo", help="print a reconciliation transcript")
    common(p, 1)
    p.add_argument("--h", type=int, default=1, help="cells per packet")
    p.add_argument("--delta", type=int, default=20)
    p.add_argument("--set-size", type=int, default=1000)
    p.set_defaults(func=cmd_protocol_demo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.trials < 1:
        parser.error("--trials must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"metiblt: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
