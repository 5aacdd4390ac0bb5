import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_psd(rng, d, rank=None, scale=1.0):
    r = d if rank is None else rank
    a = rng.standard_normal((d, r)) * scale
    return a @ a.T


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
