"""Federated learning simulation with adaptive performance-based client
selection, model personalization and partial layer sharing."""

from .data import ClientSplit, CsvSchema, Dataset, PartitionSpec, generate_blobs, load_csv, partition
from .federation import (
    ClientState,
    CostModel,
    FederatedClassifier,
    RoundLog,
    ServerState,
    SharePolicy,
    aggregate,
    choose_model,
    client_train,
    distributed_evaluate,
    personalize,
    run_experiment,
    run_round,
    simulate,
)
from .metrics import EfficiencyConfig, RunSummary, efficiency, overhead_reduction, summarize
from .nnet import DenseNetClassifier, LayerParams, ParamSet, TrainConfig, init_params
from .selection import ClientPerf, ShareSpec, StrategyConfig

__version__ = "0.1.0"

__all__ = [
    "ClientPerf", "ClientSplit", "ClientState", "CostModel", "CsvSchema", "Dataset",
    "DenseNetClassifier", "EfficiencyConfig", "FederatedClassifier", "LayerParams",
    "ParamSet", "PartitionSpec", "RoundLog", "RunSummary", "ServerState", "SharePolicy",
    "ShareSpec", "StrategyConfig", "TrainConfig", "aggregate", "choose_model",
    "client_train", "distributed_evaluate", "efficiency", "generate_blobs", "init_params",
    "load_csv", "overhead_reduction", "partition", "personalize", "run_experiment",
    "run_round", "simulate", "summarize",
]
