import numpy as np
import pytest

from driftdiff.fields import DensityField, Grid
from driftdiff.metrics import (DiscreteMeasure, MetricsError, coarsen_field_measure,
                               delta_distance, envelope_constant, holder_fit,
                               holder_fit_from_pairs, metric_speed, metric_speed_pairs,
                               w2_1d, wp_entropic, wp_exact)


def rnd_measure(rng, n, d=1):
    return DiscreteMeasure(rng.rand(n, d), _norm(rng.rand(n)))


def _norm(w):
    return w / w.sum()


def translated_gaussians_16sq(shift=0.2):
    g = Grid(2, ((0.0, 1.0), (0.0, 1.0)), (32, 32))
    pts = g.center_points()
    f1 = np.exp(-(((pts - [0.35, 0.5]) ** 2).sum(1)) / (2 * 0.08**2)).reshape(g.shape)
    f2 = np.exp(-(((pts - [0.35 + shift, 0.5]) ** 2).sum(1)) / (2 * 0.08**2)).reshape(g.shape)
    mu = coarsen_field_measure(DensityField(g, f1).normalized(), 256)
    nu = coarsen_field_measure(DensityField(g, f2).normalized(), 256)
    return mu, nu


class TestW2OneD:
    def test_translation_distance(self):
        # uniform[0,1] against uniform[0.5,1.5], discretized on atoms
        x = (np.arange(64) + 0.5) / 64.0
        w = np.full(64, 1.0 / 64)
        mu = DiscreteMeasure(x[:, None], w)
        nu = DiscreteMeasure((x + 0.5)[:, None], w)
        assert w2_1d(mu, nu) == pytest.approx(0.5, abs=1e-12)

    def test_identical_zero(self):
        rng = np.random.RandomState(0)
        mu = rnd_measure(rng, 40)
        assert w2_1d(mu, mu) == 0.0

    def test_translation_is_exact_for_interior_support(self):
        rng = np.random.RandomState(5)
        x = 0.2 + 0.4 * rng.rand(30, 1)
        w = _norm(rng.rand(30))
        mu = DiscreteMeasure(x, w)
        nu = DiscreteMeasure(x + 0.17, w)
        assert w2_1d(mu, nu) == pytest.approx(0.17, abs=1e-13)

    def test_matches_lp_oracle(self):
        rng = np.random.RandomState(42)
        for _ in range(10):
            mu = rnd_measure(rng, 32)
            nu = rnd_measure(rng, 32)
            lp, _ = wp_exact(mu, nu, 2.0)
            assert abs(w2_1d(mu, nu) - lp) <= 1e-8

    def test_symmetry(self):
        rng = np.random.RandomState(11)
        mu = rnd_measure(rng, 28)
        nu = rnd_measure(rng, 28)
        assert abs(w2_1d(mu, nu) - w2_1d(nu, mu)) <= 1e-10


class TestWpExact:
    def test_identical_measures(self):
        rng = np.random.RandomState(1)
        mu = rnd_measure(rng, 16, d=2)
        val, plan = wp_exact(mu, mu, 2.0)
        assert val <= 1e-9
        off_diag = plan.coupling - np.diag(np.diag(plan.coupling))
        assert off_diag.max() <= 1e-9

    def test_two_atoms_any_p(self):
        mu = DiscreteMeasure(np.array([[0.2, 0.2]]), np.array([1.0]))
        nu = DiscreteMeasure(np.array([[0.5, 0.6]]), np.array([1.0]))
        d = np.hypot(0.3, 0.4)
        for p in (1.0, 2.0, 3.0):
            assert wp_exact(mu, nu, p)[0] == pytest.approx(d, rel=1e-12)

    def test_cap_exceeded_message(self):
        rng = np.random.RandomState(2)
        mu = rnd_measure(rng, 40)
        nu = rnd_measure(rng, 40)
        with pytest.raises(MetricsError, match="coarsen"):
            wp_exact(mu, nu, 2.0, cap=32)

    def test_triangle_inequality(self):
        rng = np.random.RandomState(7)
        for _ in range(15):
            a, b, c = (rnd_measure(rng, 24, d=2) for _ in range(3))
            w_ab = wp_exact(a, b, 2.0)[0]
            w_bc = wp_exact(b, c, 2.0)[0]
            w_ac = wp_exact(a, c, 2.0)[0]
            assert w_ac <= w_ab + w_bc + 1e-9

    def test_symmetry(self):
        rng = np.random.RandomState(8)
        mu = rnd_measure(rng, 20, d=2)
        nu = rnd_measure(rng, 20, d=2)
        assert wp_exact(mu, nu, 2.0)[0] == pytest.approx(wp_exact(nu, mu, 2.0)[0], abs=1e-10)


class TestWpEntropic:
    def test_identical_measures_zero(self):
        rng = np.random.RandomState(3)
        mu = rnd_measure(rng, 24, d=2)
        assert wp_entropic(mu, mu, 2.0, reg=5e-3) <= 1e-6

    def test_translated_bumps_recover_shift(self):
        mu, nu = translated_gaussians_16sq(0.2)
        val = wp_entropic(mu, nu, 2.0, reg=1e-3 * 2.0)  # reg = 1e-3 diam^2
        assert val == pytest.approx(0.2, rel=3e-2)

    def test_monotone_approach_to_exact(self):
        mu, nu = translated_gaussians_16sq(0.2)
        exact = wp_exact(mu, nu, 2.0)[0]
        vals = [wp_entropic(mu, nu, 2.0, reg) for reg in (1.6e-2, 8e-3, 4e-3, 2e-3)]
        gaps = [abs(v - exact) for v in vals]
        assert all(gaps[i] >= gaps[i + 1] - 1e-12 for i in range(len(gaps) - 1))
        assert gaps[-1] <= 0.01 * exact


class TestDeltaDistance:
    def test_identity(self):
        rng = np.random.RandomState(4)
        mu = rnd_measure(rng, 20)
        val, tail = delta_distance(mu, mu, K=12, extents=((0.0, 1.0),))
        assert val == 0.0
        assert tail == 2.0 ** (1 - 12)

    def test_uniform_bound(self):
        rng = np.random.RandomState(5)
        mu = rnd_measure(rng, 20)
        nu = rnd_measure(rng, 20)
        val, _ = delta_distance(mu, nu, K=16, extents=((0.0, 1.0),))
        assert val <= 2.0

    def test_lipschitz_translation_bound(self):
        # |∫f d(mu - nu)| <= s for 1-Lipschitz f and a translation by s
        rng = np.random.RandomState(6)
        x = 0.2 + 0.5 * rng.rand(25, 1)
        w = _norm(rng.rand(25))
        s = 0.03
        mu = DiscreteMeasure(x, w)
        nu = DiscreteMeasure(x + s, w)
        val, _ = delta_distance(mu, nu, K=16, extents=((0.0, 1.0),))
        assert val <= s + 1e-12

    def test_truncation_consistency(self):
        rng = np.random.RandomState(9)
        mu = rnd_measure(rng, 30)
        nu = rnd_measure(rng, 30)
        v8, tail8 = delta_distance(mu, nu, K=8, extents=((0.0, 1.0),))
        v16, _ = delta_distance(mu, nu, K=16, extents=((0.0, 1.0),))
        assert v8 <= v16 + tail8

    def test_k_minimum(self):
        rng = np.random.RandomState(10)
        mu = rnd_measure(rng, 5)
        with pytest.raises(MetricsError):
            delta_distance(mu, mu, K=4)


class TestHolderFit:
    def test_stationary_trajectory(self):
        pairs = [(0.0, t, 0.0) for t in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)]
        fit = holder_fit_from_pairs(pairs)
        assert fit.stationary

    def test_recovers_power_law(self):
        gaps = np.linspace(0.05, 1.0, 12)
        pairs = [(0.0, g, 1.7 * g**0.5) for g in gaps]
        fit = holder_fit_from_pairs(pairs)
        assert fit.exponent == pytest.approx(0.5, abs=1e-9)
        assert fit.constant == pytest.approx(1.7, rel=1e-9)
        assert fit.r_squared >= 0.999999

    def test_needs_six_gaps(self):
        pairs = [(0.0, g, g) for g in (0.1, 0.2, 0.3)]
        with pytest.raises(MetricsError):
            holder_fit_from_pairs(pairs)

    def test_envelope_constant(self):
        pairs = [(0.0, 0.25, 1.0), (0.0, 1.0, 1.5)]
        assert envelope_constant(pairs, 0.5) == pytest.approx(2.0)


class TestTrajectoryWrappers:
    def test_holder_fit_on_trajectory(self, diffusion1d_run):
        _, traj = diffusion1d_run
        fit = holder_fit(traj, "W2")
        assert not fit.stationary
        assert 0.3 <= fit.exponent <= 1.2

    def test_stride_set_restricts_gaps(self, diffusion1d_run):
        _, traj = diffusion1d_run
        fit = holder_fit(traj, "W2", pair_stride_set=range(1, 9))
        assert fit.n_gaps == 8

    def test_metric_speed_on_diffusion_run(self, diffusion1d_run):
        sc, traj = diffusion1d_run
        h = sc.grid.spacing[0]
        checks = metric_speed(traj, sc.build_drift(), sc.m, sc.epsilon, budget=2.0 * h)
        assert all(c.slack >= 0.0 for c in checks)


class TestMetricSpeed:
    def test_stationary(self):
        g = Grid(1, ((0.0, 1.0),), (32,))
        f = DensityField(g, np.ones(32))
        times = [0.0, 0.5, 1.0]
        fields = [f, f, f]
        speeds = np.zeros(3)
        checks = metric_speed_pairs(times, fields, speeds,
                                    lambda a, b: 0.0)
        assert all(c.distance == 0.0 and c.speed_integral == 0.0 for c in checks)

    def test_ballistic_translation(self):
        # constant drift: RHS = c (t - s) and W2 matches it up to grid error
        g = Grid(1, ((0.0, 4.0),), (512,))
        x = g.centers(0)
        c = 0.8
        prof = np.maximum(1.0 - ((x - 1.0) / 0.3) ** 2, 0.0) ** 3

        def shifted(t):
            p = np.maximum(1.0 - ((x - 1.0 - c * t) / 0.3) ** 2, 0.0) ** 3
            return DensityField(g, p).normalized()

        times = np.linspace(0.0, 0.5, 6)
        fields = [shifted(t) for t in times]
        speeds = np.full(len(times), c)  # ||w||_{L^2(rho)} for pure translation

        def dist(a, b):
            return w2_1d(DiscreteMeasure.from_field(a), DiscreteMeasure.from_field(b))

        checks = metric_speed_pairs(times, fields, speeds, dist,
                                    budget=2.0 * g.spacing[0])
        assert all(c2.slack >= 0.0 for c2 in checks)
        mid = checks[len(checks) // 2]
        assert mid.distance == pytest.approx(mid.speed_integral, abs=2 * g.spacing[0])
