"""Datasets, per-client partitioning, synthetic blobs and CSV ingestion.

CSV layout (UTF-8, comma separated, ``.`` decimal point)::

    client_id,split,label,f0,f1,...,f{d-1}

``split`` is optional; when present every value must be ``train`` or
``test``. Labels may be any integers and are re-indexed to ``0..K-1`` in
ascending order; the original values are kept in :attr:`Dataset.classes`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CsvParseError, InvalidArgumentError


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    classes: tuple = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise InvalidArgumentError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise InvalidArgumentError("labels must be a vector matching the number of rows")
        if x.shape[0] < 1:
            raise InvalidArgumentError("a dataset needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("features must be finite")
        if self.num_classes < 1:
            raise InvalidArgumentError("num_classes must be >= 1")
        y = y.astype(np.int64)
        if y.min() < 0 or y.max() >= self.num_classes:
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes})")
        classes = tuple(range(self.num_classes)) if self.classes is None else tuple(self.classes)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "classes", classes)

    def __len__(self):
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.classes == other.classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.classes)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ClientSplit:
    client_id: int
    train: Dataset
    test: Dataset

    def __post_init__(self):
        if self.train.dim != self.test.dim:
            raise InvalidArgumentError("train and test feature widths differ")
        if self.train.num_classes != self.test.num_classes:
            raise InvalidArgumentError("train and test disagree on num_classes")


SCHEMES = ("iid", "dirichlet", "label-shard")


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "iid"
    num_clients: int = 30
    dirichlet_alpha: float | None = None
    shards_per_client: int | None = None
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidArgumentError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.num_clients) != self.num_clients or self.num_clients < 1:
            raise InvalidArgumentError("num_clients must be a positive integer")
        if self.scheme == "dirichlet" and not (
            self.dirichlet_alpha is not None and self.dirichlet_alpha > 0
        ):
            raise InvalidArgumentError("dirichlet scheme needs dirichlet_alpha > 0")
        if self.scheme == "label-shard" and not (
            self.shards_per_client is not None and self.shards_per_client >= 1
        ):
            raise InvalidArgumentError("label-shard scheme needs shards_per_client >= 1")
        if not 0 < self.test_fraction < 1:
            raise InvalidArgumentError("test_fraction must lie in (0, 1)")


def generate_blobs(num_classes, dim, samples_per_class, spread, seed) -> Dataset:
    """Balanced Gaussian clusters around centers drawn from N(0, I).

    Samples are stored class by class; ``spread`` is the per-axis noise
    standard deviation.
    """
    for name, value in (("num_classes", num_classes), ("dim", dim),
                        ("samples_per_class", samples_per_class)):
        if int(value) != value or value < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {value}")
    if not (spread >= 0 and math.isfinite(spread)):
        raise InvalidArgumentError(f"spread must be finite and >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(num_classes, dim))
    noise = rng.normal(size=(num_classes, samples_per_class, dim)) * spread
    x = (centers[:, None, :] + noise).reshape(-1, dim)
    y = np.repeat(np.arange(num_classes), samples_per_class)
    return Dataset(x, y, num_classes)


def _split_client(data: Dataset, idx, client_id, test_fraction, rng) -> ClientSplit:
    idx = rng.permutation(np.asarray(idx, dtype=np.int64))
    n_test = max(1, math.ceil(test_fraction * idx.shape[0]))
    if idx.shape[0] - n_test < 1:
        raise InvalidArgumentError(
            f"client {client_id} has {idx.shape[0]} samples; need >= 2 for a train/test split"
        )
    return ClientSplit(client_id, data.subset(idx[n_test:]), data.subset(idx[:n_test]))


def _dirichlet_assign(labels, num_clients, alpha, rng, min_size=2, max_tries=1000):
    classes = np.unique(labels)
    for _ in range(max_tries):
        buckets = [[] for _ in range(num_clients)]
        for k in classes:
            members = rng.permutation(np.flatnonzero(labels == k))
            props = rng.dirichlet(np.full(num_clients, alpha))
            cuts = (np.cumsum(props)[:-1] * members.shape[0]).astype(np.int64)
            for c, part in enumerate(np.split(members, cuts)):
                buckets[c].extend(part.tolist())
        if min(len(b) for b in buckets) >= min_size:
            return buckets
    raise InvalidArgumentError(
        f"could not draw a Dirichlet(alpha={alpha}) partition giving every client "
        f">= {min_size} samples; increase alpha or reduce num_clients"
    )


def _indices_per_client(data: Dataset, spec: PartitionSpec, rng) -> list[np.ndarray]:
    n = len(data)
    if spec.scheme == "iid":
        return np.array_split(rng.permutation(n), spec.num_clients)
    if spec.scheme == "dirichlet":
        buckets = _dirichlet_assign(data.labels, spec.num_clients, spec.dirichlet_alpha, rng)
        return [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
    order = np.argsort(data.labels, kind="stable")
    num_shards = spec.num_clients * spec.shards_per_client
    if num_shards > n:
        raise InvalidArgumentError(f"{num_shards} shards requested but only {n} samples")
    shards = np.array_split(order, num_shards)
    dealt = rng.permutation(num_shards).reshape(spec.num_clients, spec.shards_per_client)
    return [np.concatenate([shards[s] for s in row]) for row in dealt]


def partition(data: Dataset, spec: PartitionSpec) -> list[ClientSplit]:
    """Distribute ``data`` over ``spec.num_clients`` disjoint clients.

    The client ids are ``0..num_clients-1``. Each client's share is split
    into train and test with at least one test sample.
    """
    if len(data) < 2 * spec.num_clients:
        raise InvalidArgumentError(
            f"{len(data)} samples cannot give {spec.num_clients} clients a train and test sample"
        )
    rng = np.random.default_rng([spec.seed, 0])
    groups = _indices_per_client(data, spec, rng)
    split_rng = np.random.default_rng([spec.seed, 1])
    return [
        _split_client(data, idx, cid, spec.test_fraction, split_rng)
        for cid, idx in enumerate(groups)
    ]


@dataclass(frozen=True)
class CsvSchema:
    client_column: str = "client_id"
    label_column: str = "label"
    split_column: str = "split"
    feature_prefix: str = "f"
    test_fraction: float = 0.2
    seed: int = 0


def _parse_int(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise CsvParseError(f"expected an integer, got {text!r}", row, column) from None
    if not math.isfinite(value) or value != int(value):
        raise CsvParseError(f"expected an integer, got {text!r}", row, column)
    return int(value)


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise CsvParseError(f"expected a decimal number, got {text!r}", row, column) from None
    if not math.isfinite(value):
        raise CsvParseError(f"non-finite value {text!r}", row, column)
    return value


def load_csv(path, schema: CsvSchema = CsvSchema()) -> list[ClientSplit]:
    """Read a per-client table into one :class:`ClientSplit` per client id.

    Clients are returned in ascending id order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvParseError(f"{path}: file is empty", row=1) from None
        for required in (schema.client_column, schema.label_column):
            if required not in header:
                raise CsvParseError(f"{path}: missing column", row=1, column=required)
        feature_cols = [h for h in header if h.startswith(schema.feature_prefix)
                        and h[len(schema.feature_prefix):].isdigit()]
        feature_cols.sort(key=lambda h: int(h[len(schema.feature_prefix):]))
        expected = [f"{schema.feature_prefix}{i}" for i in range(len(feature_cols))]
        if not feature_cols or feature_cols != expected:
            missing = next((e for e in expected if e not in feature_cols),
                           f"{schema.feature_prefix}0")
            raise CsvParseError(f"{path}: missing feature column", row=1, column=missing)
        known = {schema.client_column, schema.label_column, schema.split_column, *feature_cols}
        extra = [h for h in header if h not in known]
        if extra:
            raise CsvParseError(f"{path}: unexpected column", row=1, column=extra[0])
        pos = {h: i for i, h in enumerate(header)}
        has_split = schema.split_column in pos

        clients, splits, labels, rows = [], [], [], []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise CsvParseError(
                    f"expected {len(header)} fields, got {len(record)}", row=lineno
                )
            cells = [c.strip() for c in record]
            clients.append(_parse_int(cells[pos[schema.client_column]], lineno,
                                      schema.client_column))
            labels.append(_parse_int(cells[pos[schema.label_column]], lineno,
                                     schema.label_column))
            if has_split:
                token = cells[pos[schema.split_column]]
                if token not in ("train", "test"):
                    raise CsvParseError(f"unknown split token {token!r}", lineno,
                                        schema.split_column)
                splits.append(token)
            rows.append([_parse_float(cells[pos[c]], lineno, c) for c in feature_cols])
    if not rows:
        raise CsvParseError(f"{path}: no data rows", row=2)

    classes, encoded = np.unique(np.asarray(labels), return_inverse=True)
    classes = tuple(int(c) for c in classes)
    full = Dataset(np.asarray(rows), encoded, len(classes), classes)
    clients = np.asarray(clients)
    rng = np.random.default_rng(schema.seed)
    result = []
    for cid in np.unique(clients):
        idx = np.flatnonzero(clients == cid)
        if has_split:
            tokens = np.asarray(splits)[idx]
            train_idx, test_idx = idx[tokens == "train"], idx[tokens == "test"]
            if train_idx.size == 0 or test_idx.size == 0:
                raise CsvParseError(
                    f"client {cid} needs at least one train and one test row",
                    column=schema.split_column,
                )
            result.append(ClientSplit(int(cid), full.subset(train_idx), full.subset(test_idx)))
        else:
            if idx.size < 2:
                raise CsvParseError(f"client {cid} has a single row; cannot split",
                                    column=schema.client_column)
            result.append(_split_client(full, idx, int(cid), schema.test_fraction, rng))
    return result


def write_csv(path, clients: list[ClientSplit]) -> Path:
    """Write clients in the format read by :func:`load_csv` (with a split column)."""
    path = Path(path)
    if not clients:
        raise InvalidArgumentError("no clients to write")
    dim = clients[0].train.dim
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["client_id", "split", "label", *[f"f{i}" for i in range(dim)]])
        for client in clients:
            for token, ds in (("train", client.train), ("test", client.test)):
                for row, label in zip(ds.features, ds.labels):
                    writer.writerow([client.client_id, token, ds.classes[label],
                                     *(repr(float(v)) for v in row)])
    return path
