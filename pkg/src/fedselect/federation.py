"""Round engine: broadcast, personalized local training, aggregation,
distributed evaluation, client selection and cost accounting.

All state objects are immutable; :func:`run_round` returns fresh server and
client states, so a failure anywhere in a round leaves the caller's states
untouched.

Each client owns a full local copy of the model. The layers outside the
current share spec are its personal layers; the shared layers are replaced
by whatever the server broadcasts before training or evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import ClientSplit, Dataset
from .errors import InvalidArgumentError
from .metrics import EfficiencyConfig, summarize
from .nnet import (
    ParamSet,
    TrainConfig,
    complement_indices,
    evaluate,
    forward,
    init_params,
    merge_layers,
    sgd_fit,
    slice_layers,
)
from .selection import (
    ClientPerf,
    ShareSpec,
    StrategyConfig,
    dynamic_layer_count,
    make_share_spec,
    select_clients,
)

logger = logging.getLogger(__name__)

SHARE_MODES = ("full", "fixed", "dynamic")
PERSONALIZATION = ("layers", "ft")


@dataclass(frozen=True)
class CostModel:
    bytes_per_param: int = 8
    bandwidth_bytes_per_sec: float = 1.25e6
    client_samples_per_sec: float = 1000.0

    def __post_init__(self):
        if int(self.bytes_per_param) != self.bytes_per_param or self.bytes_per_param < 1:
            raise InvalidArgumentError("bytes_per_param must be a positive integer")
        if not self.bandwidth_bytes_per_sec > 0:
            raise InvalidArgumentError("bandwidth_bytes_per_sec must be > 0")
        if not self.client_samples_per_sec > 0:
            raise InvalidArgumentError("client_samples_per_sec must be > 0")

    def client_seconds(self, down_bytes, up_bytes, epochs, n_train) -> float:
        return (down_bytes / self.bandwidth_bytes_per_sec
                + epochs * n_train / self.client_samples_per_sec
                + up_bytes / self.bandwidth_bytes_per_sec)


@dataclass(frozen=True)
class SharePolicy:
    """Which layers travel each round and how clients personalize.

    ``mode`` is ``full`` (whole model), ``fixed`` (``layers`` leading layers)
    or ``dynamic`` (layer count from the previous round's mean accuracy).
    ``personalization="ft"`` keeps a full local model per client and picks
    local or global by test loss; it always shares the full model.
    """

    mode: str = "dynamic"
    layers: int | None = None
    share_from: str = "head"
    dld_threshold: float = 0.25
    personalization: str = "layers"

    def __post_init__(self):
        if self.mode not in SHARE_MODES:
            raise InvalidArgumentError(f"share mode must be one of {SHARE_MODES}")
        if self.mode == "fixed" and not (self.layers is not None and self.layers >= 1):
            raise InvalidArgumentError("fixed share mode needs layers >= 1")
        if self.share_from not in ("head", "tail"):
            raise InvalidArgumentError("share_from must be 'head' or 'tail'")
        if not 0.0 <= self.dld_threshold <= 1.0:
            raise InvalidArgumentError("dld_threshold must lie in [0, 1]")
        if self.personalization not in PERSONALIZATION:
            raise InvalidArgumentError(f"personalization must be one of {PERSONALIZATION}")

    def spec_for(self, total_layers: int, prev_mean_accuracy: float | None) -> ShareSpec:
        if self.personalization == "ft" or self.mode == "full":
            return ShareSpec.full(total_layers)
        if self.mode == "fixed":
            if self.layers > total_layers:
                raise InvalidArgumentError(
                    f"cannot share {self.layers} layers of a {total_layers}-layer model"
                )
            return make_share_spec(self.layers, total_layers, self.share_from)
        acc = 0.0 if prev_mean_accuracy is None else prev_mean_accuracy
        count = dynamic_layer_count(acc, total_layers, self.dld_threshold)
        return make_share_spec(count, total_layers, self.share_from)


FULL_SHARING = SharePolicy(mode="full")


@dataclass(frozen=True)
class ClientState:
    client_id: int
    split: ClientSplit
    local_params: ParamSet
    last_accuracy: float = 0.0
    last_loss: float = 0.0
    last_duration: float = 0.0

    def personal_layers(self, spec: ShareSpec) -> ParamSet:
        personal = complement_indices(spec)
        return ParamSet(tuple(self.local_params.layers[i] for i in personal), personal)

    def perf(self) -> ClientPerf:
        return ClientPerf(self.client_id, self.last_accuracy, self.last_loss, self.last_duration)


@dataclass(frozen=True)
class ServerState:
    global_params: ParamSet
    round: int
    selected: tuple[int, ...]
    strategy: StrategyConfig
    policy: SharePolicy = FULL_SHARING
    last_mean_accuracy: float | None = None

    @property
    def share_mode(self) -> str:
        return self.policy.mode


@dataclass(frozen=True)
class RoundLog:
    round: int
    selected: tuple[int, ...]
    shared_layers: int
    fragment_params: int
    accuracies: tuple[float, ...]
    losses: tuple[float, ...]
    uplink_bytes: int
    downlink_bytes: int
    sim_seconds: float
    next_selected: tuple[int, ...] = field(default=())

    @property
    def selected_count(self) -> int:
        return len(self.selected)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def min_accuracy(self) -> float:
        return float(np.min(self.accuracies))

    @property
    def max_accuracy(self) -> float:
        return float(np.max(self.accuracies))


def aggregate(fragments) -> ParamSet:
    """Sample-size weighted mean of shape-identical fragments."""
    fragments = list(fragments)
    if not fragments:
        raise InvalidArgumentError("nothing to aggregate")
    first = fragments[0][0]
    for frag, n in fragments:
        if frag.indices != first.indices or any(
            a.weights.shape != b.weights.shape for a, b in zip(frag.layers, first.layers)
        ):
            raise InvalidArgumentError("fragments differ in shape")
        if not n > 0:
            raise InvalidArgumentError(f"sample counts must be positive, got {n}")
    counts = np.array([n for _, n in fragments], dtype=np.float64)
    weights = counts / counts.sum()
    stacked = np.stack([frag.to_vector() for frag, _ in fragments])
    # offsets from the first fragment keep identical inputs bit-exact; the clip
    # removes last-ulp excursions outside the convex hull
    base = stacked[0]
    mean = base + weights @ (stacked - base)
    mean = np.clip(mean, stacked.min(axis=0), stacked.max(axis=0))
    return first.from_vector(mean)


def personalize(client: ClientState, global_fragment: ParamSet, spec: ShareSpec) -> ParamSet:
    return merge_layers(global_fragment, client.personal_layers(spec), spec)


def choose_model(local_loss: float, global_loss: float) -> str:
    """``"local"`` when the local loss is no worse than the global one."""
    for name, value in (("local_loss", local_loss), ("global_loss", global_loss)):
        if not np.isfinite(value) or value < 0:
            raise InvalidArgumentError(f"{name} must be finite and >= 0, got {value}")
    return "local" if local_loss <= global_loss else "global"


def _ft_pick(client: ClientState, global_model: ParamSet) -> ParamSet:
    _, local_loss = evaluate(client.local_params, client.split.test)
    _, global_loss = evaluate(global_model, client.split.test)
    return client.local_params if choose_model(local_loss, global_loss) == "local" else global_model


def client_train(client: ClientState, global_fragment: ParamSet, spec: ShareSpec,
                 cfg: TrainConfig, personalization: str = "layers"):
    """Local training on one client.

    Returns ``(shared fragment of the trained model, |train|, new client state)``.
    """
    if personalization == "ft":
        if len(spec) != spec.total_layers:
            raise InvalidArgumentError("fine-tuning personalization shares the full model")
        start = _ft_pick(client, global_fragment)
    else:
        start = personalize(client, global_fragment, spec)
    trained, _ = sgd_fit(start, client.split.train, cfg)
    updated = replace(client, local_params=trained)
    return slice_layers(trained, spec), len(client.split.train), updated


def distributed_evaluate(clients, global_fragment: ParamSet, spec: ShareSpec,
                         personalization: str = "layers"):
    """Every client scores its composed model on its own test split.

    Returns ``(perfs, updated client states)`` in the input order.
    """
    perfs, updated = [], []
    for client in clients:
        if personalization == "ft":
            model = _ft_pick(client, global_fragment)
        else:
            model = personalize(client, global_fragment, spec)
        acc, loss = evaluate(model, client.split.test)
        new = replace(client, last_accuracy=acc, last_loss=loss)
        updated.append(new)
        perfs.append(new.perf())
    return perfs, updated


def _client_seed(base: int, round: int, client_id: int) -> int:
    return int(np.random.SeedSequence([base, round, client_id]).generate_state(1)[0])


def run_round(server: ServerState, clients, cost: CostModel, train_cfg: TrainConfig):
    """Execute one communication round; returns ``(server, clients, RoundLog)``."""
    if not server.selected:
        raise InvalidArgumentError("no clients selected for this round")
    clients = sorted(clients, key=lambda c: c.client_id)
    by_id = {c.client_id: c for c in clients}
    unknown = set(server.selected) - set(by_id)
    if unknown:
        raise InvalidArgumentError(f"selected clients {sorted(unknown)} are unknown")
    total = len(server.global_params)
    spec = server.policy.spec_for(total, server.last_mean_accuracy)
    personalization = server.policy.personalization
    fragment = slice_layers(server.global_params, spec)
    frag_bytes = fragment.param_count * cost.bytes_per_param

    results, seconds = [], []
    for cid in sorted(server.selected):
        cfg = replace(train_cfg, seed=_client_seed(train_cfg.seed, server.round, cid))
        trained, n, new_client = client_train(by_id[cid], fragment, spec, cfg, personalization)
        duration = cost.client_seconds(frag_bytes, frag_bytes, train_cfg.epochs, n)
        by_id[cid] = replace(new_client, last_duration=duration)
        results.append((trained, n))
        seconds.append(duration)

    aggregated = aggregate(results)
    rest = ParamSet(
        tuple(server.global_params.layers[i] for i in complement_indices(spec)),
        complement_indices(spec),
    )
    new_global = merge_layers(aggregated, rest, spec)

    perfs, evaluated = distributed_evaluate([by_id[c.client_id] for c in clients],
                                            aggregated, spec, personalization)
    mean_acc = float(np.mean([p.accuracy for p in perfs]))
    next_selected = tuple(select_clients(server.strategy, perfs, server.round + 1))

    count = len(server.selected)
    log = RoundLog(
        round=server.round,
        selected=tuple(sorted(server.selected)),
        shared_layers=len(spec),
        fragment_params=fragment.param_count,
        accuracies=tuple(p.accuracy for p in perfs),
        losses=tuple(p.mean_loss for p in perfs),
        uplink_bytes=count * frag_bytes,
        downlink_bytes=count * frag_bytes,
        sim_seconds=float(max(seconds)),
        next_selected=next_selected,
    )
    new_server = replace(server, global_params=new_global, round=server.round + 1,
                         selected=next_selected, last_mean_accuracy=mean_acc)
    return new_server, evaluated, log


def effective_policy(strategy: StrategyConfig, policy: SharePolicy) -> SharePolicy:
    """Baselines always exchange the full model; only acsp_fl personalizes."""
    return policy if strategy.kind == "acsp_fl" else FULL_SHARING


def simulate(splits, layer_dims, strategy: StrategyConfig, policy: SharePolicy,
             train_cfg: TrainConfig, cost: CostModel, rounds: int, seed: int):
    """Run ``rounds`` rounds from a fresh model.

    Returns ``(logs, final server state, final client states)``.
    """
    splits = sorted(splits, key=lambda s: s.client_id)
    if not splits:
        raise InvalidArgumentError("no clients")
    if rounds < 1:
        raise InvalidArgumentError("rounds must be >= 1")
    ids = [s.client_id for s in splits]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("client ids must be unique")
    params = init_params(layer_dims, seed)
    clients = [ClientState(s.client_id, s, params) for s in splits]
    server = ServerState(params, 0, tuple(ids), strategy, effective_policy(strategy, policy))
    logs = []
    for _ in range(rounds):
        server, clients, log = run_round(server, clients, cost, train_cfg)
        logger.debug("round %d: %d selected, %d layers shared, mean acc %.4f",
                     log.round, log.selected_count, log.shared_layers, log.mean_accuracy)
        logs.append(log)
    return logs, server, clients


def run_experiment(config, baseline_time: float | None = None):
    """Run the experiment described by an :class:`~fedselect.config.ExperimentConfig`.

    Returns ``(logs, summary)``.
    """
    splits = config.load_clients()
    dims = config.model_dims(splits[0].train.dim, splits[0].train.num_classes)
    logs, _, clients = simulate(splits, dims, config.strategy_config(), config.share_policy(),
                                config.train_config(), config.cost, config.rounds, config.seed)
    summary = summarize(logs, [c.perf() for c in clients], config.efficiency, baseline_time)
    return logs, summary


class FederatedClassifier(ClassifierMixin, BaseEstimator):
    """Federated training of a dense classifier as a scikit-learn estimator.

    ``fit`` takes ``groups`` naming the client that owns each row; every
    client's rows are split into local train and test sets and the chosen
    selection strategy is simulated for ``rounds`` rounds.

    After fitting, ``predict(X)`` uses the aggregated global model and
    ``predict(X, client_id=c)`` the personalized model of client ``c``.
    """

    def __init__(self, strategy="acsp_fl", rounds=100, hidden_layer_sizes=(256, 256, 256),
                 share_mode="dynamic", shared_layers=None, personalization="layers",
                 decay=0.005, k_fraction=0.5, epochs=1, learning_rate=0.05, batch_size=32,
                 test_fraction=0.2, random_state=0):
        self.strategy = strategy
        self.rounds = rounds
        self.hidden_layer_sizes = hidden_layer_sizes
        self.share_mode = share_mode
        self.shared_layers = shared_layers
        self.personalization = personalization
        self.decay = decay
        self.k_fraction = k_fraction
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.test_fraction = test_fraction
        self.random_state = random_state

    def fit(self, X, y, groups=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        if groups is None:
            raise InvalidArgumentError("groups (client id per row) is required")
        groups = np.asarray(groups)
        if groups.shape != (X.shape[0],):
            raise InvalidArgumentError("groups must have one entry per row")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        data = Dataset(X, encoded, len(self.classes_))
        rng = np.random.default_rng(self.random_state)
        splits = []
        for cid in np.unique(groups):
            idx = rng.permutation(np.flatnonzero(groups == cid))
            n_test = max(1, int(np.ceil(self.test_fraction * idx.size)))
            if idx.size - n_test < 1:
                raise InvalidArgumentError(f"client {cid} needs at least 2 rows")
            splits.append(ClientSplit(int(cid), data.subset(idx[n_test:]),
                                      data.subset(idx[:n_test])))
        strategy = StrategyConfig(kind=self.strategy, k_fraction=self.k_fraction,
                                  decay=self.decay, seed=self.random_state)
        policy = SharePolicy(mode=self.share_mode, layers=self.shared_layers,
                             personalization=self.personalization)
        dims = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        train_cfg = TrainConfig(self.epochs, self.learning_rate, self.batch_size,
                                self.random_state)
        self.logs_, server, clients = simulate(splits, dims, strategy, policy, train_cfg,
                                               CostModel(), self.rounds, self.random_state)
        self.global_params_ = server.global_params
        self.clients_ = {c.client_id: c for c in clients}
        self.summary_ = summarize(self.logs_, [c.perf() for c in clients], EfficiencyConfig())
        self.n_features_in_ = X.shape[1]
        return self

    def _model_for(self, client_id):
        if client_id is None:
            return self.global_params_
        if client_id not in self.clients_:
            raise InvalidArgumentError(f"unknown client {client_id!r}")
        client = self.clients_[client_id]
        if self.personalization == "ft" and self.strategy == "acsp_fl":
            return _ft_pick(client, self.global_params_)
        # the spec the client was last evaluated with
        total = len(self.global_params_)
        spec = make_share_spec(self.logs_[-1].shared_layers, total)
        return personalize(client, slice_layers(self.global_params_, spec), spec)

    def predict_proba(self, X, client_id=None):
        check_is_fitted(self, "global_params_")
        X = check_array(X, dtype=np.float64)
        return forward(self._model_for(client_id), X)

    def predict(self, X, client_id=None):
        proba = self.predict_proba(X, client_id)
        return self.classes_[np.argmax(proba, axis=1)]
