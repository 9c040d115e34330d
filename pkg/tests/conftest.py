"""Shared fixtures and the acceptance-line reporter.

Acceptance tests append one "criterion N: PASS/FAIL ..." line each to
ACCEPTANCE_LINES; the terminal-summary hook prints them after the run so
they survive pytest's output capture.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from cgsorec.denoiser import init_params
from cgsorec.schedule import make_schedule
from cgsorec.trainer import Checkpoint, TrainConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def rand_binary_csr(rng: np.random.Generator, m: int, n: int, density: float) -> sp.csr_matrix:
    """Random 0/1 csr matrix with at least one nonzero per row."""
    dense = (rng.random((m, n)) < density).astype(np.float64)
    for i in range(m):
        if not dense[i].any():
            dense[i, rng.integers(0, n)] = 1.0
    return sp.csr_matrix(dense)


def untrained_checkpoint(width: int, T: int = 5, seed: int = 0, hidden=(8,), tag: str = "CGD") -> Checkpoint:
    """A checkpoint with random (untrained) weights; enough for chain math."""
    sched = make_schedule(T, 1e-4, 0.02)
    params = init_params((width, *hidden, width), 4, seed=seed, model_tag=tag)
    cfg = TrainConfig(learning_rate=1e-3, epochs=1, seed=seed)
    return Checkpoint(params=params, sched=sched, config=cfg, epoch=1, valid_metric=float("nan"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
