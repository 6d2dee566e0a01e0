"""Cross-validation score family and the CV/marginal-likelihood identities."""

import math
from itertools import combinations

import numpy as np
import pytest

from sasgp.errors import CapExceeded
from sasgp.estimators import (
    cv_identity_check,
    cv_score,
    exact_log_marginal,
    unbiased_marginal_exhaustive_mean,
    unbiased_marginal_sample,
)
from sasgp.kernel import KernelParams, gram

P = KernelParams.from_values()


def oracle_conditional_logpdf(x, z, active, n_idx, p):
    """Independent dense-numpy predictive log density of one point."""
    k_full = gram(z, p, add_noise=True)
    d = x.shape[1]
    if len(active) == 0:
        var = p.amplitude + p.noise_variance
        mean = np.zeros(d)
    else:
        k_aa = k_full[np.ix_(active, active)]
        k_na = k_full[n_idx, active]
        inv = np.linalg.inv(k_aa)
        mean = k_na @ inv @ x[active]
        var = k_full[n_idx, n_idx] - k_na @ inv @ k_na
    resid = x[n_idx] - mean
    return float(-0.5 * (d * np.log(2 * np.pi) + d * np.log(var) + np.sum(resid**2) / var))


def oracle_cv_score(x, z, p, r):
    n = x.shape[0]
    total = 0.0
    count = 0
    for holdout in combinations(range(n), r):
        active = [i for i in range(n) if i not in holdout]
        total += sum(oracle_conditional_logpdf(x, z, active, i, p) for i in holdout) / r
        count += 1
    return total / count


class FakeRng:
    """Deterministic stand-in driving the sampled code paths through a
    pre-programmed sequence of (r, holdout) draws."""

    def __init__(self, r_seq=None, holdout_seq=None):
        self.r_seq = list(r_seq or [])
        self.holdout_seq = [np.array(h, dtype=np.intp) for h in (holdout_seq or [])]

    def integers(self, low, high):
        return self.r_seq.pop(0)

    def choice(self, n, size, replace):
        assert not replace
        out = self.holdout_seq.pop(0)
        assert out.size == size
        return out


class TestCvScore:
    def test_full_holdout_is_prior_marginals(self):
        rng = np.random.default_rng(0)
        n = 4
        z = rng.standard_normal((n, 2))
        x = rng.standard_normal((n, 2))
        got = cv_score(x, z, P, r=n)
        var = P.amplitude + P.noise_variance
        prior = sum(
            -0.5 * (2 * np.log(2 * np.pi) + 2 * np.log(var) + np.sum(x[i] ** 2) / var)
            for i in range(n)
        )
        assert got == pytest.approx(prior / n, abs=1e-12)

    def test_exhaustive_matches_enumeration_oracle(self):
        rng = np.random.default_rng(1)
        n = 4
        z = rng.standard_normal((n, 2))
        x = rng.standard_normal((n, 1))
        assert cv_score(x, z, P, r=2) == pytest.approx(oracle_cv_score(x, z, P, 2), abs=1e-12)

    def test_sampled_over_all_splits_equals_exhaustive(self):
        rng = np.random.default_rng(2)
        n, r = 5, 2
        z = rng.standard_normal((n, 2))
        x = rng.standard_normal((n, 1))
        splits = list(combinations(range(n), r))
        fake = FakeRng(holdout_seq=splits)
        sampled = cv_score(x, z, P, r=r, mode="sampled", num_permutations=len(splits), rng=fake)
        assert sampled == pytest.approx(cv_score(x, z, P, r=r), abs=1e-12)

    def test_enumeration_cap(self):
        rng = np.random.default_rng(3)
        n = 30
        z = rng.standard_normal((n, 2))
        x = rng.standard_normal((n, 1))
        assert math.comb(30, 15) > 10**6
        with pytest.raises(CapExceeded):
            cv_score(x, z, P, r=15)

    def test_bad_arguments(self):
        x = np.zeros((3, 1))
        z = np.zeros((3, 2))
        with pytest.raises(ValueError):
            cv_score(x, z, P, r=0)
        with pytest.raises(ValueError):
            cv_score(x, z, P, r=1, mode="sampled")  # rng missing


class TestCvIdentity:
    def test_scalar_case(self):
        x = np.array([[0.4]])
        z = np.array([[0.1, -0.2]])
        rep = cv_identity_check(x, z, P)
        expected = exact_log_marginal(x, z, P)
        assert rep.lhs == pytest.approx(expected, abs=1e-14)
        assert rep.rhs == pytest.approx(expected, abs=1e-14)

    def test_identity_at_n5(self):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((5, 2))
        x = rng.standard_normal((5, 1))
        rep = cv_identity_check(x, z, P)
        assert abs(rep.lhs - rep.rhs) <= 1e-8
        assert np.max(np.abs(rep.s_ccv + rep.s_pcv - rep.lhs)) <= 1e-8

    def test_pcv_is_tail_sum_of_cv_scores(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((4, 2))
        x = rng.standard_normal((4, 2))
        rep = cv_identity_check(x, z, P)
        for hold in range(1, 5):
            tail = rep.s_cv[hold:].sum()
            assert rep.s_pcv[hold - 1] == pytest.approx(tail, abs=1e-9)

    def test_cap(self):
        rng = np.random.default_rng(6)
        with pytest.raises(CapExceeded):
            cv_identity_check(rng.standard_normal((9, 1)), rng.standard_normal((9, 2)), P)


class TestUnbiasedSample:
    def test_n1_always_exact(self):
        x = np.array([[1.3]])
        z = np.array([[0.0, 0.0]])
        rng = np.random.default_rng(7)
        for _ in range(5):
            v = unbiased_marginal_sample(x, z, P, rng)
            assert v == pytest.approx(exact_log_marginal(x, z, P), abs=1e-13)

    def test_exhaustive_average_matches_exact(self):
        rng = np.random.default_rng(8)
        for n in (2, 3, 4):
            z = rng.standard_normal((n, 2))
            x = rng.standard_normal((n, 2))
            mean = unbiased_marginal_exhaustive_mean(x, z, P)
            assert mean == pytest.approx(exact_log_marginal(x, z, P), abs=1e-8)

    def test_sampler_path_average_through_fake_rng(self):
        # Drive unbiased_marginal_sample itself through every (r, split) draw
        # and average with the sampler's own probabilities.
        rng = np.random.default_rng(9)
        n = 4
        z = rng.standard_normal((n, 2))
        x = rng.standard_normal((n, 1))
        total = 0.0
        for r in range(1, n + 1):
            splits = list(combinations(range(n), r))
            inner = 0.0
            for holdout in splits:
                fake = FakeRng(r_seq=[r], holdout_seq=[holdout])
                inner += unbiased_marginal_sample(x, z, P, fake)
            total += inner / len(splits)
        total /= n
        assert total == pytest.approx(exact_log_marginal(x, z, P), abs=1e-8)

    def test_variance_is_finite_over_many_draws(self):
        rng = np.random.default_rng(10)
        z = rng.standard_normal((5, 2))
        x = rng.standard_normal((5, 1))
        draws = np.array([unbiased_marginal_sample(x, z, P, rng) for _ in range(10**4)])
        assert np.isfinite(draws.var())
        # and the empirical mean is consistent with unbiasedness
        se = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(draws.mean() - exact_log_marginal(x, z, P)) <= 4 * se
