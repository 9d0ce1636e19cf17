"""Run metrics and report files.

Times are simulated seconds from the linear cost model, not wall clock.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

ROUNDS_HEADER = (
    "round", "selected_count", "shared_layers", "mean_acc", "min_acc", "max_acc",
    "uplink_bytes", "downlink_bytes", "sim_seconds",
)
CLIENTS_HEADER = ("client_id", "final_accuracy", "times_selected", "uplink_bytes")
COMPARISON_HEADER = (
    "strategy", "mean_acc", "total_uplink_bytes", "sim_seconds", "overhead_reduction",
    "efficiency",
)


@dataclass(frozen=True)
class EfficiencyConfig:
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {value}")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise InvalidArgumentError(
                f"alpha + beta must equal 1, got {self.alpha} + {self.beta}"
            )


@dataclass(frozen=True)
class RunSummary:
    accuracy_per_client: dict
    convergence_time_seconds: float
    efficiency: float | None
    max_accuracy: float
    mean_accuracy: float
    min_accuracy: float
    overhead_reduction: float | None
    rounds: int
    selection_counts: dict
    total_downlink_bytes: int
    total_uplink_bytes: int
    uplink_bytes_per_client: dict
    uplink_bytes_per_client_avg: float


def overhead_reduction(solution_time: float, baseline_time: float) -> float:
    if not baseline_time > 0:
        raise InvalidArgumentError(f"baseline_time must be > 0, got {baseline_time}")
    if not solution_time >= 0:
        raise InvalidArgumentError(f"solution_time must be >= 0, got {solution_time}")
    return float(min(1.0, max(0.0, 1.0 - solution_time / baseline_time)))


def efficiency(mean_accuracy: float, overhead_red: float,
               cfg: EfficiencyConfig = EfficiencyConfig()) -> float:
    """Weighted sum of mean accuracy and overhead reduction."""
    for name, value in (("mean_accuracy", mean_accuracy), ("overhead_red", overhead_red)):
        if not 0.0 <= value <= 1.0:
            raise InvalidArgumentError(f"{name} must lie in [0, 1], got {value}")
    return cfg.alpha * mean_accuracy + cfg.beta * overhead_red


def summarize(logs, perfs, cfg: EfficiencyConfig = EfficiencyConfig(),
              baseline_time: float | None = None) -> RunSummary:
    """Fold per-round logs and the final client performances into a summary.

    ``perfs`` is the final per-client evaluation (objects with ``client_id``
    and ``accuracy``). Efficiency and overhead reduction are only filled in
    when ``baseline_time`` is given.
    """
    logs = list(logs)
    if not logs:
        raise InvalidArgumentError("no round logs to summarize")
    perfs = sorted(perfs, key=lambda p: p.client_id)
    if not perfs:
        raise InvalidArgumentError("no client performances to summarize")
    accuracy = {int(p.client_id): float(p.accuracy) for p in perfs}
    counts = {cid: 0 for cid in accuracy}
    per_client_up = {cid: 0 for cid in accuracy}
    for log in logs:
        share = log.uplink_bytes // log.selected_count if log.selected_count else 0
        for cid in log.selected:
            counts[cid] = counts.get(cid, 0) + 1
            per_client_up[cid] = per_client_up.get(cid, 0) + share
    total_up = sum(log.uplink_bytes for log in logs)
    total_down = sum(log.downlink_bytes for log in logs)
    seconds = float(sum(log.sim_seconds for log in logs))
    accs = np.array(list(accuracy.values()))
    mean_acc = float(accs.mean())
    reduction = eff = None
    if baseline_time is not None:
        reduction = overhead_reduction(seconds, baseline_time)
        eff = efficiency(mean_acc, reduction, cfg)
    return RunSummary(
        accuracy_per_client=accuracy,
        convergence_time_seconds=seconds,
        efficiency=eff,
        max_accuracy=float(accs.max()),
        mean_accuracy=mean_acc,
        min_accuracy=float(accs.min()),
        overhead_reduction=reduction,
        rounds=len(logs),
        selection_counts=counts,
        total_downlink_bytes=int(total_down),
        total_uplink_bytes=int(total_up),
        uplink_bytes_per_client=per_client_up,
        uplink_bytes_per_client_avg=total_up / len(accuracy),
    )


def with_baseline(summary: RunSummary, baseline_time: float,
                  cfg: EfficiencyConfig = EfficiencyConfig()) -> RunSummary:
    """Fill in overhead reduction and efficiency relative to a baseline run time."""
    reduction = overhead_reduction(summary.convergence_time_seconds, baseline_time)
    return replace(summary, overhead_reduction=reduction,
                   efficiency=efficiency(summary.mean_accuracy, reduction, cfg))


def _num(value) -> str:
    # repr is the shortest round-tripping form, stable across runs
    return repr(float(value))


def summary_to_json(summary: RunSummary) -> str:
    payload = asdict(summary)
    for key in ("accuracy_per_client", "selection_counts", "uplink_bytes_per_client"):
        payload[key] = {str(k): v for k, v in sorted(payload[key].items())}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def summary_from_json(text: str) -> RunSummary:
    payload = json.loads(text)
    names = {f.name for f in fields(RunSummary)}
    if set(payload) != names:
        raise InvalidArgumentError(
            f"summary keys mismatch: missing {sorted(names - set(payload))}, "
            f"extra {sorted(set(payload) - names)}"
        )
    for key in ("accuracy_per_client", "selection_counts", "uplink_bytes_per_client"):
        payload[key] = {int(k): v for k, v in payload[key].items()}
    return RunSummary(**payload)


def read_summary(path) -> RunSummary:
    return summary_from_json(Path(path).read_text(encoding="utf-8"))


def _write(path: Path, writer_fn):
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer_fn(fh)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_reports(summary: RunSummary, logs, out_dir) -> list[Path]:
    """Write ``rounds.csv``, ``clients.csv`` and ``summary.json`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc

    def rounds(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUNDS_HEADER)
        for log in logs:
            w.writerow([log.round, log.selected_count, log.shared_layers,
                        _num(log.mean_accuracy), _num(log.min_accuracy),
                        _num(log.max_accuracy), log.uplink_bytes, log.downlink_bytes,
                        _num(log.sim_seconds)])

    def clients(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLIENTS_HEADER)
        for cid in sorted(summary.accuracy_per_client):
            w.writerow([cid, _num(summary.accuracy_per_client[cid]),
                        summary.selection_counts.get(cid, 0),
                        summary.uplink_bytes_per_client.get(cid, 0)])

    return [
        _write(out / "rounds.csv", rounds),
        _write(out / "clients.csv", clients),
        _write(out / "summary.json", lambda fh: fh.write(summary_to_json(summary))),
    ]


def write_comparison(rows, path) -> Path:
    """``rows``: iterable of ``(strategy, RunSummary)`` with efficiency filled in."""

    def body(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_HEADER)
        for name, s in rows:
            w.writerow([name, _num(s.mean_accuracy), s.total_uplink_bytes,
                        _num(s.convergence_time_seconds), _num(s.overhead_reduction),
                        _num(s.efficiency)])

    return _write(Path(path), body)
