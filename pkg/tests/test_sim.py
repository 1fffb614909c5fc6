import math

import numpy as np
import pytest

from odefit.exceptions import ConfigError, IntegrationError
from odefit.metrics import compute_metrics
from odefit.model import OdeModel, get_model
from odefit.sim import SimSpec, generate_dataset, generate_pair, rk4_integrate, rk4_path, simulate_fit


def linear(rate):
    return OdeModel("lin", 1, 1, lambda t, x, a: rate * np.asarray(x) + 0 * np.asarray(a)[..., :1])


class TestRK4:
    def test_zero_rhs_constant(self):
        m = OdeModel("still", 1, 1, lambda t, x, a: np.zeros_like(np.asarray(x, float)))
        s = rk4_integrate(m, [0.0], [7.0], [0, 0.3, 2.0, 5.5])
        assert np.all(s.values == 7.0)

    def test_exponential(self):
        s = rk4_integrate(linear(1.0), [0.0], [1.0], [0.0, 1.0], max_dt=0.01)
        assert s.values[-1, 0] == pytest.approx(math.e, abs=1e-6)

    def test_fourth_order(self):
        errs = []
        for dt in (0.1, 0.05):
            s = rk4_integrate(linear(1.0), [0.0], [1.0], [0.0, 1.0], max_dt=dt)
            errs.append(abs(s.values[-1, 0] - math.e))
        assert 14 < errs[0] / errs[1] < 18

    def test_lorenz_bounded(self):
        s = rk4_integrate(get_model("lorenz"), [10, 28, 8 / 3], [0.1, 1, 5], np.linspace(0, 2.5, 251), max_dt=0.001)
        assert np.max(np.abs(s.values)) < 60

    def test_batched_matches_single(self):
        m = get_model("population")
        A = np.array([[10, 5, 3, 1, 3], [9, 5, 3, 1, 2.5]], float)
        grid = np.linspace(0, 1, 11)
        batch = rk4_path(m, A, [1.0, 1.0], grid)
        for b in range(2):
            np.testing.assert_array_equal(batch[:, b], rk4_path(m, A[b], [1.0, 1.0], grid))

    def test_blow_up_reports_time(self):
        m = OdeModel("blow", 1, 1, lambda t, x, a: np.asarray(x) ** 2 + 0 * np.asarray(a)[..., :1])
        with pytest.raises(IntegrationError) as exc:
            rk4_integrate(m, [0.0], [1.0], np.linspace(0, 3, 31))
        assert 0.9 <= exc.value.time <= 3.0

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            rk4_path(linear(1.0), [0.0], [1.0], [0.0, 0.0])


class TestGenerate:
    def spec(self, **kw):
        base = dict(model="population", true_params=(10, 5, 3, 1, 3), x0=(1, 1), t_span=(0, 2), n_points=201)
        base.update(kw)
        return SimSpec(**base)

    def test_zero_noise_is_exact(self):
        spec = self.spec(noise_std=(0.0, 0.0))
        noisy, clean = generate_pair(spec)
        exact = rk4_integrate(get_model("population"), spec.true_params, spec.x0, spec.grid(), max_dt=spec.max_dt)
        assert noisy == clean == exact

    def test_seeded_reproducible(self):
        spec = self.spec(noise_rel=0.02, seed=8)
        assert generate_dataset(spec) == generate_dataset(spec)
        assert generate_dataset(spec) != generate_dataset(self.spec(noise_rel=0.02, seed=9))

    def test_variance_two(self):
        spec = SimSpec("lorenz", (10, 28, 8 / 3), (0.1, 1, 5), (0, 10), 3334, noise_std=(math.sqrt(2),) * 3, seed=1)
        noisy, clean = generate_pair(spec)
        resid = (noisy.values - clean.values).reshape(-1)
        assert resid.size >= 10_000
        assert 1.85 <= resid.var() <= 2.15

    def test_row_count(self):
        assert generate_dataset(self.spec()).n_samples == 201

    def test_invalid_specs(self):
        with pytest.raises(ConfigError):
            self.spec(t_span=(1, 1))
        with pytest.raises(ConfigError):
            self.spec(noise_std=(0.1, 0.1), noise_rel=0.1)
        with pytest.raises(ConfigError):
            self.spec(integrator_dt=1.0)
        with pytest.raises(ConfigError):
            self.spec(noise_std=(-1.0, 0.0))


class TestSimulateFit:
    def test_truth_reproduces_clean(self):
        spec = TestGenerate().spec(noise_rel=0.02)
        _, clean = generate_pair(spec)
        fitted = simulate_fit(get_model("population"), spec.true_params, spec.x0, spec.grid(), max_dt=spec.max_dt)
        np.testing.assert_allclose(fitted.values, clean.values, atol=1e-12)

    def test_reported_estimate_fits_well(self):
        spec = TestGenerate().spec(noise_rel=0.02, seed=2)
        noisy, _ = generate_pair(spec)
        fitted = simulate_fit(get_model("population"), [10.0646, 5.0314, 3.1650, 1.0222, 3.1166], spec.x0, spec.grid())
        for k in range(2):
            assert compute_metrics(noisy.values[:, k], fitted.values[:, k]).r2 >= 0.99
