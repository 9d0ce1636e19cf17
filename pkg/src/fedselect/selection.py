"""Client-selection strategies and shared-layer policies.

Every strategy is a pure function of its inputs plus ``(seed, round)``.
Ties are always broken by ascending client id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgumentError

KINDS = ("full", "random_k", "poc", "oort_lite", "deev", "acsp_fl")

_EPS_SECONDS = 1e-9


@dataclass(frozen=True)
class ClientPerf:
    client_id: int
    accuracy: float
    mean_loss: float
    last_round_duration: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise InvalidArgumentError(f"accuracy must lie in [0, 1], got {self.accuracy}")
        if not self.mean_loss >= 0.0:
            raise InvalidArgumentError(f"mean_loss must be >= 0, got {self.mean_loss}")
        if not self.last_round_duration >= 0.0:
            raise InvalidArgumentError("last_round_duration must be >= 0")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "acsp_fl"
    k_fraction: float = 0.5
    decay: float = 0.005
    seed: int = 0
    oort_delay_target: float = 1.0
    oort_delay_exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind in ("random_k", "poc", "oort_lite") and not 0 < self.k_fraction <= 1:
            raise InvalidArgumentError(f"k_fraction must lie in (0, 1], got {self.k_fraction}")
        if self.kind in ("deev", "acsp_fl") and not 0 <= self.decay < 1:
            raise InvalidArgumentError(f"decay must lie in [0, 1), got {self.decay}")
        if self.kind == "oort_lite":
            if not self.oort_delay_target > 0:
                raise InvalidArgumentError("oort_delay_target must be > 0")
            if not self.oort_delay_exponent >= 0:
                raise InvalidArgumentError("oort_delay_exponent must be >= 0")


@dataclass(frozen=True)
class ShareSpec:
    """Positions of the layers that are shared with the server."""

    layer_indices: tuple[int, ...]
    total_layers: int

    def __post_init__(self):
        indices = tuple(int(i) for i in self.layer_indices)
        if self.total_layers < 1:
            raise InvalidArgumentError("total_layers must be >= 1")
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise InvalidArgumentError(f"layer indices must be strictly increasing: {indices}")
        if any(i < 0 or i >= self.total_layers for i in indices):
            raise InvalidArgumentError(
                f"layer indices {indices} out of range for {self.total_layers} layers"
            )
        object.__setattr__(self, "layer_indices", indices)

    @classmethod
    def full(cls, total_layers: int) -> "ShareSpec":
        return cls(tuple(range(total_layers)), total_layers)

    def __len__(self):
        return len(self.layer_indices)


def _require(perfs):
    perfs = list(perfs)
    if not perfs:
        raise InvalidArgumentError("no client performances given")
    return perfs


def _top_k_count(n: int, k_fraction: float) -> int:
    if not 0 < k_fraction <= 1:
        raise InvalidArgumentError(f"k_fraction must lie in (0, 1], got {k_fraction}")
    # round away float noise before the ceiling, e.g. 0.1 * 30 = 3.0000000000000004
    return min(n, max(1, math.ceil(round(k_fraction * n, 9))))


def filter_clients(perfs) -> list[int]:
    """Ids of clients at or below the mean accuracy, worst first."""
    perfs = _require(perfs)
    # exact rational comparison: a float mean of equal values can round below them
    total = sum(Fraction(p.accuracy) for p in perfs)
    kept = [p for p in perfs if Fraction(p.accuracy) * len(perfs) <= total]
    kept.sort(key=lambda p: (p.accuracy, p.client_id))
    return [p.client_id for p in kept]


def decay_count(selected_size: int, round: int, decay: float) -> int:
    """``ceil(selected_size * (1 - decay) ** round)``, never below 1."""
    if not 0 <= decay < 1:
        raise InvalidArgumentError(f"decay must lie in [0, 1), got {decay}")
    if selected_size < 1:
        raise InvalidArgumentError("selected_size must be >= 1")
    if round < 0:
        raise InvalidArgumentError("round must be >= 0")
    return max(1, math.ceil(selected_size * (1.0 - decay) ** round))


def select_acsp(perfs, round: int, cfg: StrategyConfig) -> list[int]:
    if cfg.kind not in ("acsp_fl", "deev"):
        raise InvalidArgumentError(f"select_acsp needs kind acsp_fl or deev, got {cfg.kind!r}")
    ranked = filter_clients(perfs)
    return ranked[: decay_count(len(ranked), round, cfg.decay)]


def select_random_k(client_ids, k_fraction: float, round: int, seed: int) -> list[int]:
    ids = sorted(client_ids)
    if not ids:
        raise InvalidArgumentError("no client ids given")
    count = _top_k_count(len(ids), k_fraction)
    if count == len(ids):
        return ids
    rng = np.random.default_rng([seed, round])
    picked = rng.choice(len(ids), size=count, replace=False)
    return sorted(ids[i] for i in picked)


def _rank_desc(perfs, scores, count):
    order = sorted(range(len(perfs)), key=lambda i: (-scores[i], perfs[i].client_id))
    return [perfs[i].client_id for i in order[:count]]


def select_poc(perfs, k_fraction: float) -> list[int]:
    """The clients with the highest mean loss, highest first."""
    perfs = _require(perfs)
    return _rank_desc(perfs, [p.mean_loss for p in perfs],
                      _top_k_count(len(perfs), k_fraction))


def oort_utility(perf: ClientPerf, delay_target: float, delay_exponent: float) -> float:
    duration = max(perf.last_round_duration, _EPS_SECONDS)
    return perf.mean_loss * min(1.0, (delay_target / duration) ** delay_exponent)


def select_oort_lite(perfs, k_fraction: float, cfg: StrategyConfig) -> list[int]:
    """Loss-driven utility discounted for clients slower than the delay target."""
    perfs = _require(perfs)
    scores = [oort_utility(p, cfg.oort_delay_target, cfg.oort_delay_exponent) for p in perfs]
    return _rank_desc(perfs, scores, _top_k_count(len(perfs), k_fraction))


def select_clients(cfg: StrategyConfig, perfs, round: int) -> list[int]:
    """Dispatch to the strategy named by ``cfg.kind``; result sorted by id."""
    perfs = _require(perfs)
    if cfg.kind == "full":
        chosen = [p.client_id for p in perfs]
    elif cfg.kind == "random_k":
        chosen = select_random_k([p.client_id for p in perfs], cfg.k_fraction, round, cfg.seed)
    elif cfg.kind == "poc":
        chosen = select_poc(perfs, cfg.k_fraction)
    elif cfg.kind == "oort_lite":
        chosen = select_oort_lite(perfs, cfg.k_fraction, cfg)
    else:
        chosen = select_acsp(perfs, round, cfg)
    return sorted(chosen)


def dynamic_layer_count(accuracy: float, total_layers: int, threshold: float = 0.25) -> int:
    """Number of leading layers to share given the current accuracy.

    All layers are shared at or below ``threshold``; above it the count is
    ``ceil(1 / accuracy)`` clamped to ``[1, total_layers]``.
    """
    if not 0.0 <= accuracy <= 1.0:
        raise InvalidArgumentError(f"accuracy must lie in [0, 1], got {accuracy}")
    if total_layers < 1:
        raise InvalidArgumentError("total_layers must be >= 1")
    if accuracy <= threshold:
        return total_layers
    return min(total_layers, max(1, math.ceil(1.0 / accuracy)))


def make_share_spec(layer_count: int, total_layers: int, share_from: str = "head") -> ShareSpec:
    """Share the first ``layer_count`` layers (``head``) or the last ones (``tail``)."""
    if not 1 <= layer_count <= total_layers:
        raise InvalidArgumentError(
            f"layer_count must lie in [1, {total_layers}], got {layer_count}"
        )
    if share_from == "head":
        return ShareSpec(tuple(range(layer_count)), total_layers)
    if share_from == "tail":
        return ShareSpec(tuple(range(total_layers - layer_count, total_layers)), total_layers)
    raise InvalidArgumentError(f"share_from must be 'head' or 'tail', got {share_from!r}")
