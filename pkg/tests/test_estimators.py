import numpy as np
import pytest

from sasgp.errors import CapExceeded
from sasgp.estimators import (
    ActiveSplit,
    conditional_moments,
    exact_log_marginal,
    exact_log_marginal_grads,
    exact_two_term,
    random_split,
    sas_estimate,
    sas_grads,
)
from sasgp.kernel import KernelParams, gram

P = KernelParams.from_values()


def dense_logpdf(x, cov):
    """Independent oracle: multi-column zero-mean Gaussian log density."""
    x = np.atleast_2d(x)
    n, d = x.shape
    _, logdet = np.linalg.slogdet(cov)
    inv = np.linalg.inv(cov)
    return sum(-0.5 * (n * np.log(2 * np.pi) + logdet + x[:, j] @ inv @ x[:, j]) for j in range(d))


class TestActiveSplit:
    def test_requires_nonempty_active(self):
        with pytest.raises(ValueError):
            ActiveSplit(active=np.array([], dtype=int), holdout=np.array([0, 1]))

    def test_rejects_overlap(self):
        with pytest.raises(ValueError):
            ActiveSplit(active=np.array([0, 1]), holdout=np.array([1, 2]))

    def test_allows_empty_holdout(self):
        s = ActiveSplit(active=np.array([0, 1, 2]), holdout=np.array([], dtype=int))
        assert s.batch_size == 3

    def test_random_split_partitions(self):
        rng = np.random.default_rng(0)
        s = random_split(10, 4, rng)
        assert s.active.size == 4
        assert sorted(np.concatenate([s.active, s.holdout]).tolist()) == list(range(10))

    def test_random_split_bounds(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            random_split(5, 6, rng)
        with pytest.raises(ValueError):
            random_split(5, 0, rng)


class TestExactLogMarginal:
    def test_scalar_case(self):
        v = exact_log_marginal(np.array([[0.0]]), np.array([[0.3, 0.3]]), P)
        assert v == pytest.approx(-0.5 * np.log(2 * np.pi * (P.amplitude + P.noise_variance)), abs=1e-14)

    def test_against_dense_oracle(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal((6, 2))
        x = rng.standard_normal((6, 3))
        oracle = dense_logpdf(x, gram(z, P, add_noise=True))
        assert exact_log_marginal(x, z, P) == pytest.approx(oracle, abs=1e-9)

    def test_column_duplication_scaling(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((5, 2))
        x = rng.standard_normal((5, 1))
        single = exact_log_marginal(x, z, P)
        double = exact_log_marginal(np.hstack([x, x]), z, P)
        assert double == pytest.approx(2 * single, rel=1e-13)

    def test_cap(self):
        rng = np.random.default_rng(3)
        with pytest.raises(CapExceeded):
            exact_log_marginal(rng.standard_normal((5, 1)), rng.standard_normal((5, 2)), P, cap=4)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(4)
        n, d, q = 8, 3, 2
        z = 0.1 * rng.standard_normal((n, q))
        x = rng.standard_normal((n, d))
        _, dtheta, dz = exact_log_marginal_grads(x, z, P)
        h = 1e-5
        for i in range(3):
            vp, vm = P.to_vector(), P.to_vector()
            vp[i] += h
            vm[i] -= h
            fd = (
                exact_log_marginal(x, z, KernelParams.from_vector(vp))
                - exact_log_marginal(x, z, KernelParams.from_vector(vm))
            ) / (2 * h)
            assert abs(dtheta[i] - fd) / max(abs(fd), 1e-8) <= 1e-5
        for a in range(n):
            for b in range(q):
                zp, zm = z.copy(), z.copy()
                zp[a, b] += h
                zm[a, b] -= h
                fd = (exact_log_marginal(x, zp, P) - exact_log_marginal(x, zm, P)) / (2 * h)
                assert abs(dz[a, b] - fd) / max(abs(dz[a, b]), abs(fd), 1e-8) <= 1e-5


class TestConditionalMoments:
    def test_distant_holdout_recovers_prior(self):
        x_a = np.array([[1.7]])
        z_a = np.array([[0.0, 0.0]])
        z_r = np.array([[50.0, 50.0]])  # many lengthscales away
        mean, var = conditional_moments(x_a, z_a, z_r, P)
        assert abs(mean[0, 0]) < 1e-12
        assert var[0] == pytest.approx(P.amplitude + P.noise_variance, abs=1e-12)

    def test_coincident_noise_free_interpolates(self):
        p = KernelParams.from_values(0.5, 0.1, 1e-12)
        x_a = np.array([[0.9, -0.4]])
        z = np.array([[0.2, 0.3]])
        mean, var = conditional_moments(x_a, z, z, p)
        assert np.allclose(mean, x_a, atol=1e-9)
        assert var[0] < 1e-9

    def test_two_point_chain_rule(self):
        rng = np.random.default_rng(5)
        z = 0.2 * rng.standard_normal((2, 2))
        x = rng.standard_normal((2, 1))
        joint = exact_log_marginal(x, z, P)
        first = exact_log_marginal(x[:1], z[:1], P)
        mean, var = conditional_moments(x[:1], z[:1], z[1:], P)
        second = -0.5 * (np.log(2 * np.pi) + np.log(var[0]) + (x[1, 0] - mean[0, 0]) ** 2 / var[0])
        assert first + second == pytest.approx(joint, abs=1e-10)

    def test_empty_active_set(self):
        z_r = np.random.default_rng(6).standard_normal((3, 2))
        mean, var = conditional_moments(np.zeros((0, 2)), np.zeros((0, 2)), z_r, P)
        assert mean.shape == (3, 2)
        assert np.all(mean == 0.0)
        assert np.allclose(var, P.amplitude + P.noise_variance)

    def test_variance_bounds(self):
        rng = np.random.default_rng(7)
        x_a = rng.standard_normal((6, 2))
        z_a = 0.3 * rng.standard_normal((6, 2))
        z_r = 0.3 * rng.standard_normal((4, 2))
        _, var = conditional_moments(x_a, z_a, z_r, P)
        assert np.all(var > 0)
        assert np.all(var <= P.amplitude + P.noise_variance + 1e-12)


class TestSasEstimate:
    def test_empty_holdout_is_active_term_only(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal((4, 2))
        x = rng.standard_normal((4, 2))
        split = ActiveSplit(active=np.arange(4), holdout=np.array([], dtype=int))
        rep = sas_estimate(x, z, split, P)
        assert rep.total == rep.term_active
        assert rep.term_conditional == 0.0
        assert rep.total == pytest.approx(exact_log_marginal(x, z, P), abs=1e-12)

    def test_single_holdout_is_exact(self):
        rng = np.random.default_rng(9)
        for trial in range(10):
            n = int(rng.integers(2, 24))
            z = rng.standard_normal((n, 2))
            x = rng.standard_normal((n, 3))
            split = random_split(n, n - 1, rng)
            rep = sas_estimate(x, z, split, P)
            assert rep.total == pytest.approx(exact_log_marginal(x, z, P), abs=1e-9)

    def test_two_holdout_gap_is_neglected_covariance(self):
        # Independent oracle: build the full 2-point conditional Gaussian with
        # dense linear algebra and compare the log densities directly.
        rng = np.random.default_rng(10)
        for trial in range(5):
            n = 9
            z = 0.4 * rng.standard_normal((n, 2))
            x = rng.standard_normal((n, 2))
            split = random_split(n, n - 2, rng)
            rep = sas_estimate(x, z, split, P)
            exact = exact_log_marginal(x, z, P)

            k_full = gram(z, P, add_noise=True)
            a, r = split.active, split.holdout
            k_aa = k_full[np.ix_(a, a)]
            k_ra = k_full[np.ix_(r, a)]
            k_rr = k_full[np.ix_(r, r)]
            inv_aa = np.linalg.inv(k_aa)
            mean_joint = k_ra @ inv_aa @ x[a]
            cov_joint = k_rr - k_ra @ inv_aa @ k_ra.T
            resid = x[r] - mean_joint
            joint_cond = dense_logpdf(resid, cov_joint)
            indep_cond = sum(
                dense_logpdf(resid[i : i + 1, :], cov_joint[i : i + 1, i : i + 1]) for i in range(2)
            )
            correction = joint_cond - indep_cond  # what conditional independence drops
            assert rep.total - exact == pytest.approx(-correction, abs=1e-8)

    def test_total_is_sum_of_terms(self):
        rng = np.random.default_rng(11)
        z = rng.standard_normal((10, 2))
        x = rng.standard_normal((10, 2))
        split = random_split(10, 4, rng)
        rep = sas_estimate(x, z, split, P)
        assert rep.total == rep.term_conditional + rep.term_active
        assert rep.per_point.shape == (6,)
        assert rep.term_conditional == pytest.approx(rep.per_point.sum(), abs=1e-12)

    def test_order_invariance_within_sets(self):
        rng = np.random.default_rng(12)
        z = rng.standard_normal((8, 2))
        x = rng.standard_normal((8, 2))
        split = random_split(8, 3, rng)
        shuffled = ActiveSplit(
            active=rng.permutation(split.active), holdout=rng.permutation(split.holdout)
        )
        a = sas_estimate(x, z, split, P)
        b = sas_estimate(x, z, shuffled, P)
        assert b.total == pytest.approx(a.total, abs=1e-10)
        assert b.term_active == pytest.approx(a.term_active, abs=1e-10)

    def test_grads_cover_ablation_terms(self):
        rng = np.random.default_rng(13)
        z = 0.1 * rng.standard_normal((7, 2))
        x = rng.standard_normal((7, 2))
        split = random_split(7, 4, rng)
        full, dtheta_f, dz_f = sas_grads(x, z, split, P, term="full")
        cond, dtheta_c, dz_c = sas_grads(x, z, split, P, term="conditional")
        act, dtheta_a, dz_a = sas_grads(x, z, split, P, term="active")
        assert full.total == pytest.approx(cond.total + act.total, abs=1e-12)
        assert np.allclose(dtheta_f, dtheta_c + dtheta_a, atol=1e-12)
        assert np.allclose(dz_f, dz_c + dz_a, atol=1e-12)


class TestExactTwoTerm:
    def test_equals_exact_marginal_for_every_split(self):
        rng = np.random.default_rng(14)
        n = 9
        z = rng.standard_normal((n, 2))
        x = rng.standard_normal((n, 2))
        exact = exact_log_marginal(x, z, P)
        for a_size in range(1, n + 1):
            split = random_split(n, a_size, rng)
            assert exact_two_term(x, z, split, P) == pytest.approx(exact, abs=1e-9)

    def test_empty_holdout(self):
        rng = np.random.default_rng(15)
        z = rng.standard_normal((5, 2))
        x = rng.standard_normal((5, 1))
        split = ActiveSplit(active=np.arange(5), holdout=np.array([], dtype=int))
        assert exact_two_term(x, z, split, P) == pytest.approx(exact_log_marginal(x, z, P), abs=1e-12)

    def test_single_holdout_equals_sas(self):
        rng = np.random.default_rng(16)
        z = rng.standard_normal((6, 2))
        x = rng.standard_normal((6, 2))
        split = random_split(6, 5, rng)
        assert exact_two_term(x, z, split, P) == pytest.approx(
            sas_estimate(x, z, split, P).total, abs=1e-10
        )

    def test_random_batches_near_64(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            n = int(rng.integers(32, 65))
            z = rng.standard_normal((n, 2))
            x = rng.standard_normal((n, 2))
            split = random_split(n, int(rng.integers(1, n)), rng)
            assert exact_two_term(x, z, split, P) == pytest.approx(
                exact_log_marginal(x, z, P), abs=1e-9
            )
