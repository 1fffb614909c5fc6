import numpy as np
import pytest

from odefit.baseline import BoundedProblem, NLSConfig, nls_fit, project
from odefit.exceptions import ConfigError
from odefit.experiments import preset_config
from odefit.model import get_model
from odefit.sim import generate_pair, rk4_integrate

POP_A = np.array([10, 5, 3, 1, 3.0])


@pytest.fixture(scope="module")
def pop_data():
    cfg = preset_config("population", seed=4, overrides={"sim": {"n_points": 41}})
    noisy, clean = generate_pair(cfg.sim, cfg.model)
    return cfg, noisy, clean


class TestProblem:
    def test_a0_outside_bounds(self, pop_data):
        cfg, noisy, _ = pop_data
        with pytest.raises(ConfigError):
            BoundedProblem(cfg.model, noisy, (1, 1), 0, 11, [12, 1, 1, 1, 1])

    def test_clipped(self, pop_data):
        cfg, noisy, _ = pop_data
        p = BoundedProblem.clipped(cfg.model, noisy, (1, 1), 0, 11, [100, -100, -100, 20, -30])
        assert p.a0.tolist() == [11, 0, 0, 11, 0]

    def test_project(self):
        assert project([-1, 5, 20], 0, 11).tolist() == [0, 5, 11]

    def test_inverted_bounds(self, pop_data):
        cfg, noisy, _ = pop_data
        with pytest.raises(ConfigError):
            BoundedProblem(cfg.model, noisy, (1, 1), 5, 1, [3] * 5)


class TestNLS:
    def test_truth_is_fixed_point(self):
        m = get_model("population")
        grid = np.linspace(0, 1, 21)
        data = rk4_integrate(m, POP_A, [1, 1], grid, max_dt=0.005)
        res = nls_fit(BoundedProblem(m, data, (1, 1), -100, 100, POP_A, max_dt=0.005))
        assert res.iterations <= 2
        np.testing.assert_array_equal(res.params.values, POP_A)

    def test_bounded_monotone(self, pop_data):
        cfg, noisy, _ = pop_data
        p = BoundedProblem(cfg.model, noisy, (1, 1), 0, 11, [1, 1, 1, 1, 1], max_dt=cfg.sim.max_dt)
        res = nls_fit(p, NLSConfig(max_iters=15))
        norms = res.residual_norms()
        assert np.all(np.diff(norms) < 0)
        assert np.all((res.params.values >= 0) & (res.params.values <= 11))
        np.testing.assert_allclose(res.params.values, POP_A, rtol=0.1)

    def test_active_bound(self, pop_data):
        cfg, noisy, _ = pop_data
        # truth a1 = 10 lies outside an upper bound of 8
        p = BoundedProblem(cfg.model, noisy, (1, 1), 0, 8, [1, 1, 1, 1, 1], max_dt=cfg.sim.max_dt)
        res = nls_fit(p, NLSConfig(max_iters=30))
        assert res.params.values.max() <= 8
        assert np.isclose(res.params.values, 8).any()

    def test_blow_up_trials_rejected(self, pop_data):
        cfg, noisy, _ = pop_data
        p = BoundedProblem.clipped(cfg.model, noisy, (1, 1), 0, 11, [0.1, 0.1, 11, 0.1, 0.1], max_dt=cfg.sim.max_dt)
        res = nls_fit(p, NLSConfig(max_iters=5))
        assert np.isfinite(res.final_residual_norm)
        assert res.method == "nls"
