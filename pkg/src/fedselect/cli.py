"""Command-line entry point.

    fedselect run -c cfg.toml [--set key=value]... [-o out_dir] [--seed N]
    fedselect compare -c cfg.toml --strategies acsp_fl,poc,deev [-o out_dir]
    fedselect gen-data -c cfg.toml [-o data.csv]

Exit status: 0 on success, 1 on runtime failure, 2 on usage or config
errors. Errors are printed to stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import dump_config, parse_config
from .data import write_csv
from .errors import ConfigError, CsvParseError, InvalidArgumentError
from .federation import run_experiment
from .metrics import with_baseline, write_comparison, write_reports
from .selection import KINDS

logger = logging.getLogger("fedselect")

BASELINE = "full"


class UsageError(Exception):
    pass


def _emit_error(kind: str, message: str, **extra) -> None:
    payload = {"error": kind, "message": message, **extra}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _load(args):
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None):
        overrides.append(f"out_dir={json.dumps(str(args.out))}")
    return parse_config(args.config, overrides)


def _save_config(cfg, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.toml").write_text(dump_config(cfg), encoding="utf-8")


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out_dir)
    logs, summary = run_experiment(cfg)
    write_reports(summary, logs, out)
    _save_config(cfg, out)
    print(f"mean_acc={summary.mean_accuracy:.4f} "
          f"uplink_mb={summary.total_uplink_bytes / 1e6:.3f} "
          f"sim_seconds={summary.convergence_time_seconds:.2f} out={out}")
    return 0


def _strategy_list(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    if len(names) < 2:
        raise UsageError("compare needs at least two strategies")
    unknown = [s for s in names if s not in KINDS]
    if unknown:
        raise UsageError(f"unknown strategies {unknown}; choose from {', '.join(KINDS)}")
    ordered = [BASELINE] + [s for s in dict.fromkeys(names) if s != BASELINE]
    return ordered


def cmd_compare(args) -> int:
    strategies = _strategy_list(args.strategies)
    cfg = _load(args)
    out = Path(cfg.out_dir)
    _save_config(cfg, out)

    runs = {}
    for kind in strategies:
        logs, summary = run_experiment(cfg.with_strategy(kind))
        runs[kind] = (logs, summary)
        logger.info("%s: mean_acc=%.4f uplink=%d", kind, summary.mean_accuracy,
                    summary.total_uplink_bytes)
    baseline_time = runs[BASELINE][1].convergence_time_seconds

    rows = []
    for kind in strategies:
        logs, raw = runs[kind]
        summary = with_baseline(raw, baseline_time, cfg.efficiency)
        write_reports(summary, logs, out / kind)
        rows.append((kind, summary))
        print(f"{kind}: mean_acc={summary.mean_accuracy:.4f} "
              f"uplink_mb={summary.total_uplink_bytes / 1e6:.3f} "
              f"sim_seconds={summary.convergence_time_seconds:.2f} "
              f"efficiency={summary.efficiency:.4f}", flush=True)
    write_comparison(rows, out / "comparison.csv")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load(replace_ns(args, out=None))
    if cfg.dataset.kind != "synthetic":
        raise UsageError("gen-data needs dataset.kind = 'synthetic'")
    path = Path(args.out) if args.out else Path(cfg.out_dir) / "data.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    clients = cfg.load_clients()
    write_csv(path, clients)
    rows = sum(len(c.train) + len(c.test) for c in clients)
    print(f"wrote {rows} rows for {len(clients)} clients to {path}")
    return 0


def replace_ns(ns, **changes):
    return argparse.Namespace(**{**vars(ns), **changes})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedselect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("-c", "--config", required=True)
    run.add_argument("--set", action="append", metavar="KEY=VALUE", default=[])
    run.add_argument("-o", "--out")
    run.add_argument("--seed", type=int)
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="run several strategies on one setup")
    compare.add_argument("-c", "--config", required=True)
    compare.add_argument("--strategies", required=True,
                         help=f"comma separated subset of {', '.join(KINDS)}")
    compare.add_argument("--set", action="append", metavar="KEY=VALUE", default=[])
    compare.add_argument("-o", "--out")
    compare.add_argument("--seed", type=int)
    compare.set_defaults(func=cmd_compare)

    gen = sub.add_parser("gen-data", help="write the configured synthetic data as CSV")
    gen.add_argument("-c", "--config", required=True)
    gen.add_argument("--set", action="append", metavar="KEY=VALUE", default=[])
    gen.add_argument("-o", "--out", help="CSV path (default: <out_dir>/data.csv)")
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return 2
    except ConfigError as exc:
        _emit_error("config", str(exc), problems=exc.problems)
        return 2
    except FileNotFoundError as exc:
        _emit_error("config", str(exc), path=str(exc.filename or args.config))
        return 2
    except (CsvParseError, InvalidArgumentError, OSError) as exc:
        _emit_error("runtime", str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
