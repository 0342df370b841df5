import numpy as np
import pytest

from dtnh.batch import MiniBatch
from dtnh.net import LayerSpec, NetworkSpec, init_params


def central_differences(f, x, step=1e-6, coords=None):
    """Numerical gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    coords = range(x.size) if coords is None else coords
    out = {}
    for i in coords:
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        out[i] = (f(xp) - f(xm)) / (2.0 * step)
    return out


def max_relative_error(analytic, numeric, floor=1e-4):
    """Worst per-coordinate ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps coordinates whose true derivative is ~0 from dividing
    roundoff by roundoff; central-difference noise at step 1e-6 is ~1e-10.
    """
    worst = 0.0
    for i, n in numeric.items():
        a = analytic[i]
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), floor))
    return worst


def mlp_spec(taps=True):
    return NetworkSpec(
        (6,),
        (
            LayerSpec.dense(6, 12),
            LayerSpec.relu(tap=taps),
            LayerSpec.dense(12, 8),
            LayerSpec.relu(tap=taps),
            LayerSpec.dense(8, 3),
            LayerSpec.head(),
        ),
    )


def dense_only_spec():
    return NetworkSpec((5,), (LayerSpec.dense(5, 7, tap=True), LayerSpec.dense(7, 3), LayerSpec.head()))


def conv_spec():
    return NetworkSpec(
        (2, 7, 7),
        (
            LayerSpec.conv2d(2, 3, 3, 3, stride=1),
            LayerSpec.relu(tap=True),
            LayerSpec.conv2d(3, 4, 2, 2, stride=2),
            LayerSpec.relu(tap=True),
            LayerSpec.flatten(),
            LayerSpec.dense(16, 3),
            LayerSpec.head(),
        ),
    )


NET_ZOO = {"dense": dense_only_spec, "mlp": mlp_spec, "conv": conv_spec}


def random_batch(spec, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n,) + spec.input_shape)
    y = rng.integers(0, spec.num_classes, size=n)
    return MiniBatch(x, y)


def random_params(spec, seed, bias_scale=0.1):
    rng = np.random.default_rng(seed + 1000)
    p = init_params(spec, seed)
    # nonzero biases exercise their gradient path
    p[spec.bias_mask()] = rng.normal(scale=bias_scale, size=int(spec.bias_mask().sum()))
    return p


@pytest.fixture(params=sorted(NET_ZOO))
def zoo_spec(request):
    return NET_ZOO[request.param]()


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion for the summary."""

    def record(name, ok, detail):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
