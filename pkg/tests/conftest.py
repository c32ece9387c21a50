import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hisd.dynamics import SaddleState  # noqa: E402
from hisd.energy import QuadraticEnergy  # noqa: E402
from hisd.harness import PRESETS, run_convergence  # noqa: E402

_CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        passed, detail = _CRITERIA[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {key}: {detail}")


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(key, passed, detail):
        _CRITERIA[key] = (bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} {key}: {detail}")
        assert passed, f"{key}: {detail}"

    return record


@pytest.fixture(scope="session")
def preset_runs():
    """Full convergence sweeps (T = 10, tau = 2^-6..2^-9, ref 2^-13) per preset.

    Computed once per session; returns ``name -> (report, reference, trajectories)``
    with the wall-clock time of the whole sweep in ``.seconds``.
    """
    out = _Runs()
    start = time.perf_counter()
    for name, p in PRESETS.items():
        out[name] = run_convergence(
            p.model(), p.initial_state(), p.T, label=name, return_trajectories=True
        )
    out.seconds = time.perf_counter() - start
    return out


class _Runs(dict):
    seconds = 0.0


@pytest.fixture
def fixture_model():
    return QuadraticEnergy(np.diag([1.0, 2.0, 3.0]))


@pytest.fixture(params=[1, 2], ids=["k1", "k2"])
def fixture_state(request):
    vs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]][: request.param]
    return SaddleState.from_initial([0.0, 0.0, 1.0], vs)


def random_orthonormal_state(rng, d, k):
    """Random point on the sphere with ``k`` orthonormal tangent directions."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, k + 1)))
    return SaddleState(Q[:, 0].copy(), tuple(Q[:, i + 1].copy() for i in range(k)))
