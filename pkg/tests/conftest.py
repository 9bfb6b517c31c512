"""Shared fixtures plus a summary hook that echoes acceptance verdicts.

Acceptance tests register one verdict line each; the hook reprints them at
the end of the run so they are visible even when pytest captures stdout.
"""

import numpy as np
import pytest

from vcbart.config import Hyperparameters, default_hyperparameters
from vcbart.data import PanelDataset

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Callable that records and prints one acceptance verdict line."""
    def record(criterion: int, ok: bool, detail: str) -> str:
        line = f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_panel(n_subjects=12, n_i=3, p=2, R=3, sigma=0.5, seed=0,
               rho=0.0, **from_arrays_kw):
    """Small panel with a smooth varying-coefficient signal, for unit tests."""
    rng = np.random.default_rng(seed)
    N = n_subjects * n_i
    subjects = np.repeat(np.arange(n_subjects), n_i)
    x = rng.standard_normal((N, p))
    z = rng.uniform(size=(N, R))
    beta0 = np.sin(2 * np.pi * z[:, 0])
    signal = beta0.copy()
    for j in range(p):
        signal += (j + 0.5) * z[:, min(j, R - 1)] * x[:, j]
    if rho > 0.0:
        shared = np.repeat(rng.standard_normal(n_subjects), n_i)
        noise = np.sqrt(rho) * shared + np.sqrt(1 - rho) * rng.standard_normal(N)
    else:
        noise = rng.standard_normal(N)
    y = signal + sigma * noise
    return PanelDataset.from_arrays(y, x, z, subjects, **from_arrays_kw)


@pytest.fixture
def tiny_panel():
    return make_panel()


@pytest.fixture
def quick_hyper():
    """Cheap settings for tests that need a real fitted posterior."""
    return default_hyperparameters(2, 3, n_trees=10, n_iter=120, n_burn=40,
                                   n_chains=1, seed=42)
