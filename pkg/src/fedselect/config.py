"""Experiment configuration: TOML parsing, validation, overrides, dumping.

A config file looks like::

    rounds = 100
    seed = 0
    share_mode = "dynamic"        # full | fixed | dynamic
    personalization = "layers"    # layers | ft

    [dataset]
    kind = "synthetic"            # or "csv" with path = "..."
    num_classes = 6
    dim = 16

    [partition]
    scheme = "dirichlet"
    num_clients = 30
    dirichlet_alpha = 0.5

    [model]
    hidden = [256, 256, 256]

    [strategy]
    kind = "acsp_fl"
    decay = 0.005

Section seeds left unset fall back to the top-level ``seed``. Every problem
found is reported in one :class:`~fedselect.errors.ConfigError`.
"""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import tomli_w

from .data import SCHEMES, CsvSchema, PartitionSpec, generate_blobs, load_csv, partition
from .errors import ConfigError
from .federation import PERSONALIZATION, SHARE_MODES, CostModel, SharePolicy
from .metrics import EfficiencyConfig
from .nnet import TrainConfig
from .selection import KINDS, StrategyConfig


def _int(lo=None):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int):
            return "expected an integer"
        if lo is not None and v < lo:
            return f"must be >= {lo}"
    return check


def _real(lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            return "expected a finite number"
        if lo is not None and (v <= lo if lo_open else v < lo):
            return f"must be {'>' if lo_open else '>='} {lo}"
        if hi is not None and (v >= hi if hi_open else v > hi):
            return f"must be {'<' if hi_open else '<='} {hi}"
    return check


def _choice(options):
    def check(v):
        if v not in options:
            return f"must be one of {', '.join(options)}"
    return check


def _text(v):
    if not isinstance(v, str):
        return "expected a string"


def _int_list(v):
    if not isinstance(v, (list, tuple)) or not v:
        return "expected a non-empty list of integers"
    if any(isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in v):
        return "every entry must be a positive integer"


def _optional(check):
    def wrapped(v):
        return None if v is None else check(v)
    return wrapped


# key -> (default, validator); None defaults mean "unset"
SCHEMA = {
    "": {
        "rounds": (100, _int(1)),
        "seed": (0, _int(0)),
        "out_dir": ("runs/experiment", _text),
        "share_mode": ("dynamic", _choice(SHARE_MODES)),
        "shared_layers": (None, _optional(_int(1))),
        "share_from": ("head", _choice(("head", "tail"))),
        "dld_threshold": (0.25, _real(0, 1)),
        "personalization": ("layers", _choice(PERSONALIZATION)),
    },
    "dataset": {
        "kind": ("synthetic", _choice(("synthetic", "csv"))),
        "num_classes": (6, _int(1)),
        "dim": (16, _int(1)),
        "samples_per_class": (100, _int(1)),
        "spread": (1.0, _real(0)),
        "seed": (None, _optional(_int(0))),
        "path": (None, _optional(_text)),
        "test_fraction": (0.2, _real(0, 1, True, True)),
    },
    "partition": {
        "scheme": ("iid", _choice(SCHEMES)),
        "num_clients": (30, _int(1)),
        "dirichlet_alpha": (None, _optional(_real(0, lo_open=True))),
        "shards_per_client": (None, _optional(_int(1))),
        "test_fraction": (0.2, _real(0, 1, True, True)),
        "seed": (None, _optional(_int(0))),
    },
    "model": {
        "hidden": ((256, 256, 256), _int_list),
    },
    "train": {
        "epochs": (1, _int(1)),
        "learning_rate": (0.05, _real(0, lo_open=True)),
        "batch_size": (32, _int(1)),
        "seed": (None, _optional(_int(0))),
    },
    "strategy": {
        "kind": ("acsp_fl", _choice(KINDS)),
        "k_fraction": (0.5, _real(0, 1, lo_open=True)),
        "decay": (0.005, _real(0, 1, hi_open=True)),
        "seed": (None, _optional(_int(0))),
        "oort_delay_target": (1.0, _real(0, lo_open=True)),
        "oort_delay_exponent": (1.0, _real(0)),
    },
    "cost": {
        "bytes_per_param": (8, _int(1)),
        "bandwidth_bytes_per_sec": (1.25e6, _real(0, lo_open=True)),
        "client_samples_per_sec": (1000.0, _real(0, lo_open=True)),
    },
    "efficiency": {
        "alpha": (0.5, _real(0, 1)),
        "beta": (0.5, _real(0, 1)),
    },
}
REQUIRED_SECTIONS = ("dataset",)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    num_classes: int = 6
    dim: int = 16
    samples_per_class: int = 100
    spread: float = 1.0
    seed: int | None = None
    path: str | None = None
    test_fraction: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    partition: PartitionSpec
    hidden: tuple[int, ...]
    train: TrainConfig
    strategy: StrategyConfig
    cost: CostModel
    efficiency: EfficiencyConfig
    rounds: int = 100
    seed: int = 0
    out_dir: str = "runs/experiment"
    share_mode: str = "dynamic"
    shared_layers: int | None = None
    share_from: str = "head"
    dld_threshold: float = 0.25
    personalization: str = "layers"
    base_dir: Path = field(default=Path("."), compare=False)

    def model_dims(self, feature_dim: int, num_classes: int) -> list[int]:
        return [feature_dim, *self.hidden, num_classes]

    def train_config(self) -> TrainConfig:
        return self.train

    def strategy_config(self) -> StrategyConfig:
        return self.strategy

    def share_policy(self) -> SharePolicy:
        return SharePolicy(self.share_mode, self.shared_layers, self.share_from,
                           self.dld_threshold, self.personalization)

    def csv_path(self) -> Path:
        path = Path(self.dataset.path)
        return path if path.is_absolute() else self.base_dir / path

    def load_clients(self):
        ds = self.dataset
        seed = self.seed if ds.seed is None else ds.seed
        if ds.kind == "csv":
            return load_csv(self.csv_path(), CsvSchema(test_fraction=ds.test_fraction, seed=seed))
        data = generate_blobs(ds.num_classes, ds.dim, ds.samples_per_class, ds.spread, seed)
        return partition(data, self.partition)

    def with_strategy(self, kind: str) -> "ExperimentConfig":
        return replace(self, strategy=replace(self.strategy, kind=kind))


def _suggest(key, options):
    match = difflib.get_close_matches(key, list(options), n=1)
    return f" (did you mean {match[0]!r}?)" if match else ""


def _resolve(raw: dict):
    problems = []
    top_keys = set(SCHEMA[""]) | (set(SCHEMA) - {""})
    for key in raw:
        if key not in top_keys:
            problems.append(f"{key}: unknown key{_suggest(key, top_keys)}")
    for section in REQUIRED_SECTIONS:
        if section not in raw:
            problems.append(f"{section}: required section missing")

    values = {}
    for section, keys in SCHEMA.items():
        given = raw if section == "" else raw.get(section, {})
        if section and not isinstance(given, dict):
            problems.append(f"{section}: expected a table")
            given = {}
        if section:
            for key in given:
                if key not in keys:
                    problems.append(f"{section}.{key}: unknown key{_suggest(key, keys)}")
        for key, (default, check) in keys.items():
            path = f"{section}.{key}" if section else key
            value = given.get(key, default)
            error = check(value)
            if error:
                problems.append(f"{path}: {error} (got {value!r})")
            values[path] = tuple(value) if isinstance(value, list) else value
    return values, problems


def _cross_checks(v):
    problems = []
    if v["share_mode"] == "fixed" and v["shared_layers"] is None:
        problems.append("shared_layers: required when share_mode is 'fixed'")
    if v["share_mode"] == "fixed" and isinstance(v["shared_layers"], int) and isinstance(
        v["model.hidden"], tuple
    ) and v["shared_layers"] > len(v["model.hidden"]) + 1:
        problems.append(
            f"shared_layers: model has {len(v['model.hidden']) + 1} layers, "
            f"got {v['shared_layers']}"
        )
    if v["dataset.kind"] == "csv" and not v["dataset.path"]:
        problems.append("dataset.path: required when dataset.kind is 'csv'")
    if v["dataset.kind"] == "synthetic":
        if v["partition.scheme"] == "dirichlet" and v["partition.dirichlet_alpha"] is None:
            problems.append("partition.dirichlet_alpha: required for the dirichlet scheme")
        if v["partition.scheme"] == "label-shard" and v["partition.shards_per_client"] is None:
            problems.append("partition.shards_per_client: required for the label-shard scheme")
    a, b = v["efficiency.alpha"], v["efficiency.beta"]
    if isinstance(a, (int, float)) and isinstance(b, (int, float)) and abs(a + b - 1) > 1e-9:
        problems.append(f"efficiency: alpha + beta must equal 1 (got {a} + {b})")
    return problems


def build_config(raw: dict, base_dir=Path(".")) -> ExperimentConfig:
    """Validate a parsed document (nested dicts) into an :class:`ExperimentConfig`."""
    values, problems = _resolve(raw)
    if not problems:
        problems = _cross_checks(values)
    if problems:
        raise ConfigError(problems)
    v = values
    seed = v["seed"]

    def sub_seed(key):
        return seed if v[key] is None else v[key]

    return ExperimentConfig(
        dataset=DatasetConfig(**{k: v[f"dataset.{k}"] for k in SCHEMA["dataset"]}),
        partition=PartitionSpec(
            scheme=v["partition.scheme"], num_clients=v["partition.num_clients"],
            dirichlet_alpha=v["partition.dirichlet_alpha"],
            shards_per_client=v["partition.shards_per_client"],
            test_fraction=v["partition.test_fraction"], seed=sub_seed("partition.seed"),
        ),
        hidden=v["model.hidden"],
        train=TrainConfig(v["train.epochs"], v["train.learning_rate"], v["train.batch_size"],
                          sub_seed("train.seed")),
        strategy=StrategyConfig(
            kind=v["strategy.kind"], k_fraction=v["strategy.k_fraction"],
            decay=v["strategy.decay"], seed=sub_seed("strategy.seed"),
            oort_delay_target=v["strategy.oort_delay_target"],
            oort_delay_exponent=v["strategy.oort_delay_exponent"],
        ),
        cost=CostModel(v["cost.bytes_per_param"], v["cost.bandwidth_bytes_per_sec"],
                       v["cost.client_samples_per_sec"]),
        efficiency=EfficiencyConfig(v["efficiency.alpha"], v["efficiency.beta"]),
        **{k: v[k] for k in SCHEMA[""]},
        base_dir=Path(base_dir),
    )


def parse_value(text: str):
    """Interpret an override value as a TOML literal, else as a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings to a parsed document (returns a copy)."""
    doc = {k: dict(v) if isinstance(v, dict) else v for k, v in raw.items()}
    problems = []
    for item in overrides or ():
        key, sep, text = item.partition("=")
        key = key.strip()
        if not sep or not key:
            problems.append(f"{item!r}: overrides must look like key=value")
            continue
        *parents, leaf = key.split(".")
        node = doc
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                problems.append(f"{key}: {part} is not a table")
                break
        else:
            node[leaf] = parse_value(text.strip())
    if problems:
        raise ConfigError(problems)
    return doc


def read_document(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: invalid TOML: {exc}"]) from None


def parse_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    raw = apply_overrides(read_document(path), overrides)
    return build_config(raw, base_dir=path.parent)


def to_document(cfg: ExperimentConfig) -> dict:
    """Inverse of :func:`build_config` (unset optional keys are omitted)."""
    doc = {k: getattr(cfg, k) for k in SCHEMA[""]}
    sections = {
        "dataset": cfg.dataset,
        "partition": cfg.partition,
        "train": cfg.train,
        "strategy": cfg.strategy,
        "cost": cfg.cost,
        "efficiency": cfg.efficiency,
    }
    for name, obj in sections.items():
        doc[name] = {f.name: getattr(obj, f.name) for f in fields(obj) if f.name in SCHEMA[name]}
    doc["model"] = {"hidden": list(cfg.hidden)}
    if cfg.dataset.kind == "csv":
        doc["dataset"]["path"] = str(cfg.csv_path())
    return _drop_none(doc)


def _drop_none(node):
    if isinstance(node, dict):
        return {k: _drop_none(v) for k, v in node.items() if v is not None}
    if isinstance(node, tuple):
        return list(node)
    return node


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_document(cfg))
