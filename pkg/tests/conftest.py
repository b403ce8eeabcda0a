import numpy as np
import pytest

from esihdr.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def features(rng, channels=4, size=8, count=2, batch=1):
    return [Tensor(rng.standard_normal((batch, channels, size, size))) for _ in range(count)]


def zero_params(store, prefix):
    hit = [t for name, t in store if name.startswith(prefix)]
    assert hit, f"no parameters under {prefix!r}"
    for t in hit:
        t.data[...] = 0.0


def symmetrize_kernels(store):
    """Make every spatial kernel left-right symmetric."""
    for _, t in store:
        if t.data.ndim == 4:
            t.data[...] = 0.5 * (t.data + t.data[..., ::-1])


_acceptance_lines = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, passed, detail):
        line = f"criterion {number} {title}: {'PASS' if passed else 'FAIL'} ({detail})"
        _acceptance_lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance")
        for line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)
