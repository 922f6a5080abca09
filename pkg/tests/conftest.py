import numpy as np
import pytest

from lpci.design import LpConfig
from lpci.kernels import Kernel

NAMED = ("uniform", "triangular", "epanechnikov")


def random_instance(seed: int, n: int = 50, p: int | None = None, kernel: str | None = None):
    """Random data set plus a configuration with a comfortably populated window."""
    rng = np.random.default_rng(seed)
    p = int(rng.integers(0, 4)) if p is None else p
    v = int(rng.integers(0, p + 1))
    xs = rng.uniform(-1, 1, n)
    ys = np.sin(2 * xs) + rng.normal(0, 0.3, n)
    x0 = float(rng.uniform(-0.3, 0.3))
    h = float(rng.uniform(0.6, 1.2))
    b = h / float(rng.uniform(0.5, 2.0))
    kernel = kernel or NAMED[int(rng.integers(0, 3))]
    cfg = LpConfig(p=p, v=v, h=h, b=b, kernel=Kernel(kernel), eval=x0)
    return xs, ys, cfg


@pytest.fixture
def instance():
    return random_instance


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
