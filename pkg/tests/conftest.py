import numpy as np
import pytest

from odefit.experiments import preset_config
from odefit.sim import generate_pair


def noiseless(name, **sim_overrides):
    """(model, clean series, config) for a preset with the noise switched off."""
    over = {"sim": {"noise_rel": None, "noise_std": None, **sim_overrides}}
    cfg = preset_config(name, overrides=over)
    _, clean = generate_pair(cfg.sim, cfg.model)
    return cfg.model, clean, cfg


@pytest.fixture(scope="session")
def population_clean():
    return noiseless("population")


@pytest.fixture(scope="session")
def lorenz_clean():
    return noiseless("lorenz", t_span=[0.0, 2.5])


@pytest.fixture(scope="session")
def ai_clean():
    return noiseless("activator-inhibitor")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
