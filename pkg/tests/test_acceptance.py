"""Acceptance criteria 1-12, each at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the pytest
terminal summary under "acceptance criteria".
"""

import csv
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedselect.cli import main
from fedselect.config import build_config, dump_config, tomllib
from fedselect.federation import aggregate, run_experiment
from fedselect.metrics import efficiency
from fedselect.nnet import init_params, loss_and_grad, merge_layers, slice_layers
from fedselect.selection import (
    ClientPerf,
    ShareSpec,
    decay_count,
    dynamic_layer_count,
    filter_clients,
)

from .conftest import ACCEPTANCE, finite_difference_grad, naive_weighted_mean


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    assert passed, f"criterion {number}: {detail}"


# -- 1 ---------------------------------------------------------------------

def test_criterion_01_gradient_suite():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, nets = 0.0, 0
    while nets < 20:
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(1, 9, size=depth + 1)]
        dims[-1] = max(2, dims[-1])
        params = init_params(dims, int(rng.integers(1 << 31)))
        if params.param_count > 500:
            continue
        batch = int(rng.integers(1, 8))
        x = rng.normal(size=(batch, dims[0]))
        y = rng.integers(0, dims[-1], size=batch)
        _, grads = loss_and_grad(params, x, y)
        analytic = grads.to_vector()
        numeric = finite_difference_grad(params, x, y)
        rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
        worst = max(worst, float(rel.max()))
        nets += 1
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-4 and elapsed < 5.0,
           f"max relative error {worst:.2e} (<= 1e-4), {elapsed:.2f}s (< 5s)")


# -- 2 ---------------------------------------------------------------------

def test_criterion_02_aggregation_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        dims = [int(d) for d in rng.integers(1, 6, size=int(rng.integers(2, 5)))]
        frags = [(init_params(dims, int(rng.integers(1 << 31))), int(rng.integers(1, 100)))
                 for _ in range(int(rng.integers(1, 7)))]
        # fragments with non-zero biases exercise every entry
        frags = [(p.from_vector(p.to_vector() + rng.normal(size=p.param_count)), n)
                 for p, n in frags]
        agg = aggregate(frags)
        for layer, (w, b) in zip(agg.layers, naive_weighted_mean(frags)):
            worst = max(worst, float(np.max(np.abs(layer.weights - w))),
                        float(np.max(np.abs(layer.biases - b))))
    record(2, worst <= 1e-12, f"max deviation from loop oracle {worst:.1e} (<= 1e-12)")


# -- 3 ---------------------------------------------------------------------

def _round_trip_ok(params, chosen):
    n = len(params)
    spec = ShareSpec(chosen, n)
    rest = ShareSpec(tuple(i for i in range(n) if i not in chosen), n)
    merged = merge_layers(slice_layers(params, spec), slice_layers(params, rest), spec)
    return merged.to_vector().tobytes() == params.to_vector().tobytes() and merged == params


@settings(max_examples=60, deadline=None)
@given(widths=st.lists(st.integers(1, 7), min_size=5, max_size=5),
       seed=st.integers(0, 2**31 - 1), mask=st.integers(0, 15))
def test_criterion_03_property_shapes(widths, seed, mask):
    params = init_params(widths, seed)
    assert _round_trip_ok(params, tuple(i for i in range(4) if mask >> i & 1))


def test_criterion_03_slice_merge_exhaustive():
    rng = np.random.default_rng(3)
    failures = 0
    for trial in range(5):
        dims = [int(d) for d in rng.integers(1, 8, size=5)]
        params = init_params(dims, trial)
        for mask in range(16):
            failures += not _round_trip_ok(params, tuple(i for i in range(4) if mask >> i & 1))
    record(3, failures == 0,
           f"{5 * 16 - failures}/80 subset round trips bitwise identical (plus property run)")


# -- 4 ---------------------------------------------------------------------

def test_criterion_04_decay_table():
    expected = {0: 100, 50: 78, 100: 61, 200: 37}
    got = {t: decay_count(100, t, 0.005) for t in expected}
    record(4, got == expected, f"decay_count(100, t, 0.005) = {got}")


# -- 5 ---------------------------------------------------------------------

def test_criterion_05_dld_table():
    expected = {0.2: 4, 0.34: 3, 0.5: 2, 0.92: 2, 1.0: 1}
    got = {a: dynamic_layer_count(a, 4) for a in expected}
    record(5, got == expected, f"dynamic_layer_count(A, 4) = {got}")


# -- 6 ---------------------------------------------------------------------

def test_criterion_06_filter():
    rng = np.random.default_rng(6)
    bad = 0
    for i in range(1000):
        n = int(rng.integers(1, 50))
        accs = rng.random(n)
        if i % 3 == 0:
            accs = np.round(accs * 4) / 4  # plenty of ties
        perfs = [ClientPerf(c, float(a), 1.0) for c, a in enumerate(accs)]
        picked = filter_clients(perfs)
        mean = sum(Fraction(float(a)) for a in accs) / n
        chosen = [accs[c] for c in picked]
        ok = (
            len(picked) >= 1
            and all(Fraction(float(a)) <= mean for a in chosen)
            and chosen == sorted(chosen)
        )
        bad += not ok
    record(6, bad == 0, f"{1000 - bad}/1000 vectors non-empty, <= mean, ascending")


# -- scenario shared by 7-10 -----------------------------------------------

ROUNDS = 100
SEEDS = (0, 1, 2)


def scenario(seed, kind, **top):
    raw = {
        "rounds": ROUNDS,
        "seed": seed,
        "dataset": {"kind": "synthetic", "num_classes": 6, "dim": 16,
                    "samples_per_class": 1400, "spread": 0.8},
        "partition": {"scheme": "label-shard", "num_clients": 30, "shards_per_client": 2,
                      "test_fraction": 0.2},
        "model": {"hidden": [32, 32, 32]},
        "train": {"epochs": 1, "learning_rate": 0.2, "batch_size": 16},
        "strategy": {"kind": kind, "decay": 0.005},
        "share_mode": "dynamic",
        **top,
    }
    return build_config(raw)


@pytest.fixture(scope="module")
def runs():
    out = {}
    for seed in SEEDS:
        for kind in ("full", "acsp_fl"):
            start = time.perf_counter()
            logs, summary = run_experiment(scenario(seed, kind))
            out[seed, kind] = (logs, summary, time.perf_counter() - start)
    return out


def _layer_params(dims, spec_len):
    return sum((dims[i] + 1) * dims[i + 1] for i in range(spec_len))


# -- 7 ---------------------------------------------------------------------

def test_criterion_07_byte_accounting(runs):
    dims = [16, 32, 32, 32, 6]
    mismatches = 0
    for logs, summary, _ in runs.values():
        recomputed = sum(log.selected_count * _layer_params(dims, log.shared_layers) * 8
                         for log in logs)
        mismatches += recomputed != summary.total_uplink_bytes
        mismatches += any(
            log.uplink_bytes != log.selected_count * log.fragment_params * 8 for log in logs
        )
    record(7, mismatches == 0,
           f"{len(runs)} runs: uplink re-derived from selected_count x fragment params x 8")


# -- 8 ---------------------------------------------------------------------

def test_criterion_08_communication_reduction(runs):
    ratios = [runs[s, "acsp_fl"][1].total_uplink_bytes / runs[s, "full"][1].total_uplink_bytes
              for s in SEEDS]
    slowest = max(runs[s, "acsp_fl"][2] for s in SEEDS)
    record(8, max(ratios) <= 0.10 and slowest < 120,
           f"ACSP-FL/FedAvg uplink per seed {[round(r, 3) for r in ratios]} (<= 0.10),"
           f" slowest ACSP-FL run {slowest:.1f}s (< 120s)")


# -- 9 ---------------------------------------------------------------------

def test_criterion_09_accuracy_parity(runs):
    deltas = [runs[s, "acsp_fl"][0][-1].mean_accuracy - runs[s, "full"][0][-1].mean_accuracy
              for s in SEEDS]
    passed = sum(d >= -0.02 for d in deltas)
    record(9, passed >= 2,
           f"{passed}/3 seeds with ACSP-FL - FedAvg final accuracy >= -0.02 "
           f"(deltas {[round(d, 4) for d in deltas]})")


# -- 10 --------------------------------------------------------------------

def test_criterion_10_selection_frequency(runs):
    acsp_max = [max(runs[s, "acsp_fl"][1].selection_counts.values()) for s in SEEDS]
    full_max = [max(runs[s, "full"][1].selection_counts.values()) for s in SEEDS]
    full_min = [min(runs[s, "full"][1].selection_counts.values()) for s in SEEDS]
    limit = 0.6 * ROUNDS
    ok = all(m <= limit for m in acsp_max) and full_max == full_min == [ROUNDS] * len(SEEDS)
    record(10, ok,
           f"max ACSP-FL selections per client {acsp_max} (<= {limit:.0f}); "
           f"FedAvg every client {full_min[0]}..{full_max[0]} of {ROUNDS}")


# -- 11 --------------------------------------------------------------------

COMPARE_CFG = """\
rounds = 12
seed = 5
share_mode = "dynamic"

[dataset]
num_classes = 6
dim = 16
samples_per_class = 120
spread = 0.8

[partition]
scheme = "dirichlet"
num_clients = 10
dirichlet_alpha = 0.5

[model]
hidden = [32, 32, 32]

[train]
learning_rate = 0.2
batch_size = 16

[strategy]
decay = 0.05
"""

ALL = "acsp_fl,deev,poc,oort_lite,random_k"


def _compare(tmp_path, name):
    cfg = tmp_path / "compare.toml"
    cfg.write_text(COMPARE_CFG, encoding="utf-8")
    out = tmp_path / name
    assert main(["compare", "-c", str(cfg), "--strategies", ALL, "-o", str(out)]) == 0
    return out / "comparison.csv"


def test_criterion_11_efficiency(tmp_path, capsys):
    exact = efficiency(0.91, 0.99)
    rows = list(csv.DictReader(_compare(tmp_path, "cmp").open()))
    capsys.readouterr()
    worst = max(
        abs(float(r["efficiency"]) - (0.5 * float(r["mean_acc"])
                                      + 0.5 * float(r["overhead_reduction"])))
        for r in rows
    )
    record(11, exact == 0.95 and worst <= 1e-12 and len(rows) == 6,
           f"efficiency(0.91, 0.99) = {exact!r}; comparison.csv max inconsistency {worst:.1e}"
           f" over {len(rows)} rows (<= 1e-12)")


# -- 12 --------------------------------------------------------------------

def test_criterion_12_determinism(tmp_path, capsys):
    first = _compare(tmp_path, "one").read_bytes()
    second = _compare(tmp_path, "two").read_bytes()
    capsys.readouterr()
    record(12, first == second and len(first) > 0,
           f"two compare runs give byte-identical comparison.csv ({len(first)} bytes)")


def test_scenario_config_round_trips():
    # the scenario is expressible as a config file, so the CLI can reproduce it
    cfg = scenario(0, "acsp_fl")
    assert build_config(tomllib.loads(dump_config(cfg))) == cfg
    assert cfg.model_dims(16, 6) == [16, 32, 32, 32, 6]
