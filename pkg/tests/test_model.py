import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netlasso import ConvergenceFailure, CovarianceSpec, InvalidArgument, ModelConfig, generate_model
from netlasso.model import (
    cone_bound,
    export_model,
    global_gradient,
    global_gradients_at_rows,
    global_loss,
    import_model,
    lipschitz_estimate,
    local_gradient,
    local_loss,
    reference_solution,
    rsc_rsm_probe,
    stacked_local_gradients,
    statistical_nu,
)

from oracles import finite_difference_grad, grid_minimizer_quadratic, naive_loss


def _bytes(model):
    return b"".join(a.tobytes() for a in (model.X, model.y, model.theta_star, model.noise))


class TestGenerate:
    def test_noiseless_consistency(self):
        mod = generate_model(ModelConfig(d=4, s=1, m=1, n=2, sigma_noise=0.0, seed=7))
        assert np.array_equal(mod.y[0], mod.X[0] @ mod.theta_star)

    def test_alpha_of_fixed_alpha_setting(self):
        cfg = ModelConfig(d=5000, s=71, m=50, n=61, sigma_noise=0.5)
        assert cfg.alpha == pytest.approx(0.198, abs=5e-4)

    def test_deterministic(self):
        cfg = ModelConfig(d=30, s=3, m=4, n=5, seed=11)
        assert _bytes(generate_model(cfg)) == _bytes(generate_model(cfg))

    def test_seed_changes_model(self):
        a = generate_model(ModelConfig(d=30, s=3, m=4, n=5, seed=1))
        b = generate_model(ModelConfig(d=30, s=3, m=4, n=5, seed=2))
        assert not np.array_equal(a.X, b.X)

    def test_support_is_first_s(self):
        mod = generate_model(ModelConfig(d=50, s=6, m=2, n=3, seed=4))
        assert np.count_nonzero(mod.theta_star) == 6
        assert np.all(mod.theta_star[6:] == 0)

    def test_uniform_sign_rule(self):
        mod = generate_model(ModelConfig(d=20, s=5, m=2, n=3, signal_rule="uniform_sign"))
        assert set(np.abs(mod.theta_star[:5])) == {1.0}

    def test_noise_reconstructible(self):
        mod = generate_model(ModelConfig(d=10, s=2, m=3, n=4, seed=5))
        np.testing.assert_allclose(
            mod.y, np.einsum("ind,d->in", mod.X, mod.theta_star) + mod.noise, rtol=0, atol=1e-14
        )

    def test_streams_independent_of_noise_level(self):
        a = generate_model(ModelConfig(d=10, s=2, m=3, n=4, sigma_noise=0.5, seed=5))
        b = generate_model(ModelConfig(d=10, s=2, m=3, n=4, sigma_noise=0.0, seed=5))
        assert np.array_equal(a.X, b.X)

    @pytest.mark.parametrize("kw", [dict(s=0), dict(s=11), dict(m=0), dict(n=0), dict(sigma_noise=-1)])
    def test_invalid_config(self, kw):
        base = dict(d=10, s=2, m=2, n=2)
        base.update(kw)
        with pytest.raises(InvalidArgument):
            ModelConfig(**base)

    def test_pooled_shape(self):
        mod = generate_model(ModelConfig(d=7, s=2, m=3, n=4))
        assert mod.X_stacked.shape == (12, 7)
        assert mod.N == 12

    @pytest.mark.parametrize("cov", [
        CovarianceSpec("diagonal", 4.0),
        CovarianceSpec("toeplitz", 0.6),
    ])
    def test_covariance_empirical(self, cov):
        mod = generate_model(ModelConfig(d=5, s=2, m=40, n=500, covariance=cov, seed=1))
        emp = mod.X_stacked.T @ mod.X_stacked / mod.N
        np.testing.assert_allclose(emp, cov.matrix(5), atol=0.08 * cov.zeta(5))

    def test_zeta(self):
        assert CovarianceSpec("diagonal", 4.0).zeta(10) == 4.0
        assert CovarianceSpec("toeplitz", 0.5).zeta(10) == 1.0

    @pytest.mark.parametrize("kind,param", [("diagonal", 0.0), ("toeplitz", 1.0), ("banded", 0.0)])
    def test_bad_covariance(self, kind, param):
        with pytest.raises(InvalidArgument):
            CovarianceSpec(kind, param)


class TestLossesAndGradients:
    def test_gradient_zero_at_truth_noiseless(self):
        mod = generate_model(ModelConfig(d=8, s=2, m=3, n=5, sigma_noise=0.0))
        for i in range(3):
            np.testing.assert_allclose(local_gradient(mod, i, mod.theta_star), 0, atol=1e-13)

    def test_global_is_average(self, small_model, rng):
        theta = rng.normal(size=small_model.d)
        avg = np.mean([local_gradient(small_model, i, theta) for i in range(small_model.m)], axis=0)
        g = global_gradient(small_model, theta)
        assert np.max(np.abs(g - avg)) <= 1e-14 * max(1.0, np.max(np.abs(g)))

    def test_pooled_rows_match(self, small_model, rng):
        Theta = rng.normal(size=(small_model.m, small_model.d))
        G = global_gradients_at_rows(small_model, Theta)
        for i in range(small_model.m):
            np.testing.assert_allclose(G[i], global_gradient(small_model, Theta[i]), rtol=1e-12, atol=1e-13)

    def test_stacked_rows_match(self, small_model, rng):
        Theta = rng.normal(size=(small_model.m, small_model.d))
        G = stacked_local_gradients(small_model, Theta)
        for i in range(small_model.m):
            np.testing.assert_allclose(G[i], local_gradient(small_model, i, Theta[i]), rtol=1e-13)

    def test_single_agent_global_equals_local(self, rng):
        mod = generate_model(ModelConfig(d=6, s=2, m=1, n=9))
        theta = rng.normal(size=6)
        assert global_loss(mod, theta) == local_loss(mod, 0, theta)

    def test_loss_at_zero(self, small_model):
        expected = float(np.sum(small_model.y**2)) / (2 * small_model.N)
        assert global_loss(small_model, np.zeros(small_model.d)) == pytest.approx(expected, rel=1e-14)

    def test_loss_matches_naive(self, small_model, rng):
        theta = rng.normal(size=small_model.d)
        naive = naive_loss(small_model.X_stacked, small_model.y_stacked, theta)
        assert global_loss(small_model, theta) == pytest.approx(naive, rel=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_local_gradient_finite_difference(self, seed):
        mod = generate_model(ModelConfig(d=5, s=2, m=2, n=3, seed=seed))
        theta = np.random.default_rng(seed).normal(size=5)
        fd = finite_difference_grad(lambda t: local_loss(mod, 1, t), theta)
        g = local_gradient(mod, 1, theta)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))

    @given(st.integers(0, 2**32 - 1))
    def test_global_gradient_finite_difference(self, seed):
        mod = generate_model(ModelConfig(d=5, s=2, m=3, n=4, seed=seed))
        theta = np.random.default_rng(seed).normal(size=5)
        fd = finite_difference_grad(lambda t: global_loss(mod, t), theta)
        g = global_gradient(mod, theta)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))

    def test_bad_index(self, small_model):
        with pytest.raises(InvalidArgument):
            local_gradient(small_model, small_model.m, np.zeros(small_model.d))
        with pytest.raises(InvalidArgument):
            local_gradient(small_model, -1, np.zeros(small_model.d))

    def test_bad_shape(self, small_model):
        with pytest.raises(InvalidArgument):
            global_gradient(small_model, np.zeros(small_model.d + 1))

    def test_lipschitz_estimate(self, small_model):
        Xs = small_model.X_stacked
        exact = np.linalg.eigvalsh(Xs.T @ Xs / small_model.N)[-1]
        assert lipschitz_estimate(small_model) == pytest.approx(exact, rel=1e-5)


class TestReference:
    def test_noiseless_exact(self):
        mod = generate_model(ModelConfig(d=100, s=3, m=4, n=30, sigma_noise=0.0, seed=2))
        ref = reference_solution(mod)
        assert np.linalg.norm(ref.theta - mod.theta_star) <= 1e-6
        assert ref.constraint_active

    def test_grid_oracle_d3(self):
        mod = generate_model(ModelConfig(d=3, s=1, m=1, n=10, sigma_noise=0.5, seed=3))
        r = 0.8 * float(np.abs(mod.theta_star).sum()) + 0.3
        ref = reference_solution(mod, r=r)
        grid = grid_minimizer_quadratic(mod.X_stacked, mod.y_stacked, r)
        assert np.max(np.abs(ref.theta - grid)) <= 2e-3

    def test_residual_meets_tolerance(self, small_model):
        ref = reference_solution(small_model, tol=1e-11)
        assert ref.residual <= 1e-11
        assert np.abs(ref.theta).sum() <= ref.radius * (1 + 1e-12)

    def test_noisy_error_positive(self):
        mod = generate_model(ModelConfig(d=200, s=14, m=10, n=10, seed=0))
        ref = reference_solution(mod)
        assert np.sum((ref.theta - mod.theta_star) ** 2) > 0

    def test_iteration_cap(self, small_model):
        with pytest.raises(ConvergenceFailure) as exc:
            reference_solution(small_model, tol=1e-14, max_iter=3)
        assert exc.value.residual > 1e-14
        assert exc.value.estimate.shape == (small_model.d,)

    def test_bad_radius(self, small_model):
        with pytest.raises(InvalidArgument):
            reference_solution(small_model, r=0.0)

    def test_cone_bound_along_path(self, small_model, rng):
        ref = reference_solution(small_model)
        assert ref.constraint_active
        for _ in range(50):
            from netlasso import project_l1_ball

            theta = project_l1_ball(rng.normal(size=small_model.d) * 3, ref.radius)
            ok, lhs, rhs = cone_bound(theta, ref.theta, small_model.theta_star, small_model.s)
            assert ok, (lhs, rhs)

    def test_nu(self):
        nu = statistical_nu(np.array([1.0, 0.0]), np.array([0.0, 0.0]), 4)
        assert nu == pytest.approx(2 + 2 * 2 * 1)


class TestProbe:
    def test_basis_direction(self):
        mod = generate_model(ModelConfig(d=50, s=3, m=10, n=200, seed=1))
        rep = rsc_rsm_probe(mod, 50, families=("k=1",))
        q = (mod.X_stacked**2).sum(axis=0) / mod.N
        assert np.all((q > 0.5) & (q < 2))
        assert rep.fraction_by_inequality["global_lower"] == 1.0
        assert rep.fraction_by_inequality["global_upper"] == 1.0

    def test_fraction_in_range_and_fit(self, small_model):
        rep = rsc_rsm_probe(small_model, 200)
        assert 0.0 <= rep.satisfaction_fraction <= 1.0
        assert rep.n_dirs == 200 and len(rep.kinds) == 200
        assert rep.c1_fit >= 0

    def test_fitted_c1_is_tight(self, small_model):
        rep = rsc_rsm_probe(small_model, 300)
        if rep.c1_fit > 0:
            assert rep.satisfaction_fraction < 1.0
        else:
            assert rep.satisfaction_fraction == 1.0

    def test_dense_degenerate_regime(self):
        mod = generate_model(ModelConfig(d=5, s=5, m=4, n=50))
        rep = rsc_rsm_probe(mod, 40, families=("dense",))
        assert 0.0 <= rep.satisfaction_fraction <= 1.0

    def test_more_directions_same_model(self, small_model):
        a = rsc_rsm_probe(small_model, 10)
        b = rsc_rsm_probe(small_model, 20)
        for k in a.margins:
            np.testing.assert_array_equal(a.margins[k], b.margins[k][:10])

    def test_bad_count(self, small_model):
        with pytest.raises(InvalidArgument):
            rsc_rsm_probe(small_model, 0)


class TestExport:
    @pytest.mark.parametrize("cov", [CovarianceSpec(), CovarianceSpec("toeplitz", 0.3)])
    def test_round_trip(self, tmp_path, cov):
        mod = generate_model(ModelConfig(d=9, s=2, m=3, n=4, covariance=cov, seed=2**63 + 5))
        path = tmp_path / "m.bin"
        export_model(mod, path)
        back = import_model(path)
        assert back.config == mod.config
        assert _bytes(back) == _bytes(mod)

    def test_corrupt(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"nope")
        with pytest.raises(InvalidArgument):
            import_model(path)

    def test_truncated(self, tmp_path, small_model):
        path = tmp_path / "m.bin"
        export_model(small_model, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(InvalidArgument):
            import_model(path)


def test_alpha_property():
    cfg = ModelConfig(d=1000, s=32, m=50, n=22)
    assert cfg.alpha == pytest.approx(32 * math.log(1000) / 1100)
