"""Command-line entry point: ``fcsdpc collect | run | verify``.

Exit codes: 0 ok, 1 config error, 2 data-quality failure, 3 property failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from .checks import run_suite
from .config import ConfigError, ExperimentConfig, default_config, dump, load
from .data import write_trajectory_csv
from .decoder import dump_trace, sphere_decode
from .experiment import collect, horizon_records, scenario_for
from .loop import run_closed_loop, warmup, write_steps_csv, write_timing_json
from .predictor import ConditioningError, export_json

log = logging.getLogger("fcsdpc")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PROPERTY = 0, 1, 2, 3


class DataQualityError(RuntimeError):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else default_config()
    return cfg.with_overrides(nf=args.nf, seed=args.seed, method=args.method, out=args.out,
                              trace=args.trace)


def _collect_one(cfg: ExperimentConfig, N_f: int, out: Path) -> dict:
    try:
        ds = collect(cfg, N_f)
    except RuntimeError as exc:  # excitation never became persistent
        raise DataQualityError(str(exc)) from exc
    write_trajectory_csv(ds.noisy, out / f"trajectory_nf{N_f}.csv")
    report = {"N_f": N_f, "N_p": cfg.N_p, "snr_db": str(cfg.snr_db), **ds.quality}
    with open(out / f"rank_report_nf{N_f}.json", "w") as fh:
        json.dump(report, fh, indent=1)
    return report


def cmd_collect(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for N_f in cfg.N_f:
        report = _collect_one(cfg, N_f, out)
        ok = report["satisfied"]
        print(f"N_f={N_f}: window rank {report['eq_rank']['numerical_rank']} "
              f"(noise-free value {report['eq_rank']['target']}), full row rank "
              f"{report['eq_rank']['full_row_rank']}, persistently exciting "
              f"{report['persistently_exciting']}, columns {report['columns']} -> "
              f"{'satisfied' if ok else 'NOT satisfied'}")
        if not ok:
            status = EXIT_DATA
    return status


def _run_one(cfg: ExperimentConfig, N_f: int) -> dict:
    """Collect, fit and close the loop for one horizon (runs in a worker)."""
    sc, ds = scenario_for(cfg, N_f)
    if not ds.quality["satisfied"]:
        raise DataQualityError(f"N_f={N_f}: data quality not satisfied: {ds.quality}")
    logs = run_closed_loop(sc)
    records = horizon_records(logs, N_f)
    return {"N_f": N_f, "logs": logs, "records": records, "dataset": ds, "scenario": sc}


def _write_trace(sc, N_f: int, path: Path) -> None:
    """Traced SDA solve of the first closed-loop step."""
    ctrl = sc.controller
    buf, _ = warmup(sc.plant, ctrl.cs, ctrl.N_p, sc.seed, sc.x0)
    trace: list = []
    sphere_decode(ctrl.problem(buf.xi(), buf.u_prev, sc.reference.window(0, N_f)), trace=trace)
    dump_trace(trace, path)


def cmd_run(cfg: ExperimentConfig, workers: int = 1) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump(cfg, out / "config.json")
    if workers > 1 and len(cfg.N_f) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [cfg] * len(cfg.N_f), cfg.N_f))
    else:
        results = [_run_one(cfg, N_f) for N_f in cfg.N_f]
    records = []
    for res in sorted(results, key=lambda r: r["N_f"]):
        N_f, sc = res["N_f"], res["scenario"]
        ctrl = sc.controller
        steps = [e for method in sorted(res["logs"]) for e in res["logs"][method]]
        write_steps_csv(steps, out / f"steps_nf{N_f}.csv", ctrl.cs.m, sc.plant.p)
        export_json(out / f"predictor_nf{N_f}.json", ctrl.spc, ctrl.w, ctrl.pred)
        if cfg.trace:
            _write_trace(sc, N_f, out / f"trace_nf{N_f}.jsonl")
        records.extend(res["records"])
        for r in res["records"]:
            print(f"N_f={N_f} {r['method']:<4} median {r['median']:.0f} ns, "
                  f"mean nodes {r['mean_nodes']:.1f}, outliers {len(r['outliers'])}")
    records.sort(key=lambda r: (r["N_f"], r["method"]))
    write_timing_json(records, out / "timing.json")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, quick: bool = False) -> int:
    results = run_suite(cfg, quick=quick)
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} properties hold")
    return EXIT_OK if passed == len(results) else EXIT_PROPERTY


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment JSON (default: bundled)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--method", choices=["sda", "enum"], type=str.lower,
                        help="run a single solver")
    common.add_argument("--nf", metavar="N", type=int, help="single prediction horizon")
    common.add_argument("--seed", metavar="N", type=int, help="data and closed-loop seed")
    common.add_argument("--trace", action="store_true", help="write an SDA trace (JSON lines)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="fcsdpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="collect data and check its quality")
    run = sub.add_parser("run", parents=[common], help="closed-loop runs and timing")
    run.add_argument("--workers", type=int, default=1, metavar="N",
                     help="horizons run in parallel (timings then share the CPU)")
    ver = sub.add_parser("verify", parents=[common], help="run the property suite")
    ver.add_argument("--quick", action="store_true", help="reduced instance counts")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "collect":
            return cmd_collect(cfg)
        if args.command == "run":
            return cmd_run(cfg, workers=args.workers)
        return cmd_verify(cfg, quick=args.quick)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataQualityError, ConditioningError) as exc:
        print(f"data quality failure: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
