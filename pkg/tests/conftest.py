import numpy as np
import pytest

from fedselect.data import PartitionSpec, generate_blobs, partition
from fedselect.nnet import init_params


def finite_difference_grad(params, x, y, h=1e-5):
    """Central differences of the mean cross-entropy written out from scratch."""

    def loss_of(vec):
        p = params.from_vector(vec)
        a = x
        for j, layer in enumerate(p.layers):
            z = a @ layer.weights.T + layer.biases
            if j < len(p.layers) - 1:
                a = np.maximum(z, 0.0)
            else:
                z = z - z.max(axis=1, keepdims=True)
                a = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        return -np.mean(np.log(a[np.arange(len(y)), y]))

    base = params.to_vector()
    grad = np.zeros_like(base)
    for i in range(base.size):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss_of(up) - loss_of(down)) / (2 * h)
    return grad


def naive_weighted_mean(fragments):
    """Entry-by-entry loop, independent of the vectorized aggregate."""
    total = sum(n for _, n in fragments)
    out = []
    for j in range(len(fragments[0][0])):
        w = np.zeros_like(fragments[0][0].layers[j].weights)
        b = np.zeros_like(fragments[0][0].layers[j].biases)
        for r in range(w.shape[0]):
            for c in range(w.shape[1]):
                w[r, c] = sum(f.layers[j].weights[r, c] * n for f, n in fragments) / total
            b[r] = sum(f.layers[j].biases[r] * n for f, n in fragments) / total
        out.append((w, b))
    return out


@pytest.fixture
def small_net():
    return init_params([5, 4, 3], seed=7)


@pytest.fixture
def tiny_clients():
    data = generate_blobs(3, 4, 40, 0.3, seed=1)
    return partition(data, PartitionSpec("iid", 4, test_fraction=0.25, seed=2))


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        )
