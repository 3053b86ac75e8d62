import numpy as np
import pytest

from tfpsp.channel import SystemConfig, TBGrid, build_beam_operators

ACCEPTANCE_LINES: list[str] = []


def tiny_config(**kw) -> SystemConfig:
    base = dict(M=4, U=2, N_c=16, N_g=2, K=8, k0=4, N_b=4, N_p=4)
    base.update(kw)
    return SystemConfig(**base)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    cfg = tiny_config()
    grid = TBGrid(cfg, 2, 2, 2)
    return cfg, grid, build_beam_operators(grid)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
