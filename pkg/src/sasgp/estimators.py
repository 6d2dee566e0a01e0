"""Log-marginal-likelihood machinery for the GP decoder.

The exact objective for observations x (N, D) at latents z (N, Q) is

    L(x, z) = log N(x | 0, K_NN + sigma_n^2 I)     (summed over D columns)

whose cubic cost motivates the stochastic active-set estimate: split a batch
into an active set A and hold-out set R, then

    L_hat = sum_{n in R} log p(x_n | x_A, z) + log p(x_A | z_A),

where the hold-out factors are Gaussian predictive conditionals that reuse
the single Cholesky factorization of K_AA + sigma_n^2 I. With |R| = 1 the
estimate is exact; for |R| >= 2 it neglects the cross-covariance among
hold-out points (exact_two_term keeps it and recovers the exact value for
every split, which makes it the bias oracle).

The CV-score family ties the same conditionals to the exact marginal:
averaging leave-r-out log-predictive scores over all hold-out sizes
reproduces log p(x | z) exactly, and the preparatory/cumulative split
S_PCV + S_CCV re-expresses the identity for any fixed hold-out size. Both
identities are enumerated exhaustively here at small N and serve as the
package's strongest self-checks.

All estimator values are plain floats; the *_grads variants additionally
return analytic derivatives w.r.t. the log hyperparameters (3-vector, see
kernel.THETA_NAMES) and the latent coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import linalg
from .errors import CapExceeded, DimensionMismatch
from .kernel import KernelParams, cross_gram, gram, gram_backward, cross_gram_backward, sq_dists
from .linalg import LOG_2PI, CholFactor

EXACT_CAP = 4096
CV_ENUM_CAP = 10**6
CV_IDENTITY_N_CAP = 8

Jitter = float | str  # a float, or "auto" for the escalating default policy


@dataclass(frozen=True)
class ActiveSplit:
    """Partition of a batch's local indices into active and hold-out sets."""

    active: np.ndarray
    holdout: np.ndarray

    def __post_init__(self):
        active = np.asarray(self.active, dtype=np.intp)
        holdout = np.asarray(self.holdout, dtype=np.intp)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "holdout", holdout)
        if active.size < 1:
            raise ValueError("active set must hold at least one index")
        merged = np.concatenate([active, holdout])
        if np.unique(merged).size != merged.size:
            raise ValueError("active and hold-out sets overlap or repeat indices")

    @property
    def batch_size(self) -> int:
        return self.active.size + self.holdout.size


def random_split(batch_size: int, active_size: int, rng: np.random.Generator) -> ActiveSplit:
    """Draw a uniformly random split of 0..batch_size-1 with |A| = active_size."""
    if not 1 <= active_size <= batch_size:
        raise ValueError(f"active_size={active_size} out of range for batch of {batch_size}")
    perm = rng.permutation(batch_size)
    return ActiveSplit(active=perm[:active_size], holdout=perm[active_size:])


@dataclass
class EstimatorReport:
    """Objective value with its two-term breakdown for ablations/diagnostics."""

    total: float
    term_conditional: float
    term_active: float
    per_point: np.ndarray | None = None
    kl_total: float | None = None


def _chol(m: np.ndarray, jitter: Jitter) -> CholFactor:
    if jitter == "auto":
        return linalg.robust_cholesky(m)
    return linalg.cholesky(m, float(jitter))


def exact_log_marginal(
    x: np.ndarray, z: np.ndarray, p: KernelParams, jitter: Jitter = 0.0, cap: int = EXACT_CAP
) -> float:
    """Exact log N(x | 0, K_NN + sigma_n^2 I), summed over the D columns."""
    x = np.atleast_2d(x)
    z = np.atleast_2d(z)
    n = x.shape[0]
    if z.shape[0] != n:
        raise DimensionMismatch(f"x has {n} rows but z has {z.shape[0]}")
    if n > cap:
        raise CapExceeded(f"N={n} exceeds the exact-marginal cap {cap}")
    f = _chol(gram(z, p, add_noise=True), jitter)
    return linalg.gaussian_logpdf_zero_mean(x, f)


def exact_log_marginal_grads(
    x: np.ndarray, z: np.ndarray, p: KernelParams, jitter: Jitter = 0.0, cap: int = EXACT_CAP
) -> tuple[float, np.ndarray, np.ndarray]:
    """exact_log_marginal plus analytic gradients w.r.t. (theta, z)."""
    x = np.atleast_2d(x)
    z = np.atleast_2d(z)
    if z.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"x has {x.shape[0]} rows but z has {z.shape[0]}")
    if x.shape[0] > cap:
        raise CapExceeded(f"N={x.shape[0]} exceeds the exact-marginal cap {cap}")
    r2 = sq_dists(z)
    k_nf = gram(z, p, add_noise=False, r2=r2)
    f = _chol(k_nf + p.noise_variance * np.eye(z.shape[0], dtype=k_nf.dtype), jitter)
    value = linalg.gaussian_logpdf_zero_mean(x, f)
    g_cov = linalg.gaussian_logpdf_cov_grad(x, f)
    dtheta, dz = gram_backward(z, p, g_cov, gram_nf=k_nf, r2=r2, with_noise=True)
    return value, dtheta, dz


def conditional_moments(
    x_a: np.ndarray, z_a: np.ndarray, z_r: np.ndarray, p: KernelParams, jitter: Jitter = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean (R, D) and shared per-point variance (R,) given the active set.

    m_r = K_rA (K_AA + sigma_n^2 I)^-1 x_A
    c_r = k(z_r, z_r) + sigma_n^2 - K_rA (K_AA + sigma_n^2 I)^-1 K_rA^T

    The kernel is shared across the D output dimensions, so the variance is
    one scalar per hold-out point. An empty active set yields the prior
    moments (mean 0, variance sigma_a^2 + sigma_n^2).
    """
    x_a = np.atleast_2d(x_a)
    z_r = np.atleast_2d(z_r)
    n_r = z_r.shape[0]
    prior_var = p.amplitude + p.noise_variance
    if x_a.shape[0] == 0:
        zeros = np.zeros((n_r, x_a.shape[1]), dtype=x_a.dtype)
        return zeros, np.full(n_r, prior_var, dtype=x_a.dtype)
    z_a = np.atleast_2d(z_a)
    if z_a.shape[0] != x_a.shape[0]:
        raise DimensionMismatch("x_a and z_a row counts differ")
    f = _chol(gram(z_a, p, add_noise=True), jitter)
    c = cross_gram(z_r, z_a, p)
    alpha = linalg.solve(f, x_a)
    v_cols = linalg.solve(f, c.T)
    means = c @ alpha
    variances = prior_var - np.einsum("ra,ar->r", c, v_cols)
    return means, variances


def _holdout_logpdfs(
    x: np.ndarray, z: np.ndarray, active: np.ndarray, holdout: np.ndarray, p: KernelParams, jitter: Jitter
) -> np.ndarray:
    """Per-point conditional log densities log p(x_n | x_A, z) for n in the hold-out."""
    means, variances = conditional_moments(x[active], z[active], z[holdout], p, jitter)
    resid = x[holdout] - means
    d = x.shape[1]
    return -0.5 * (d * LOG_2PI + d * np.log(variances) + (resid**2).sum(axis=1) / variances)


@dataclass
class _SasForward:
    """Intermediates of one SAS evaluation, kept for the backward pass."""

    x_a: np.ndarray
    x_r: np.ndarray
    z_a: np.ndarray
    z_r: np.ndarray
    r2_aa: np.ndarray
    gram_nf: np.ndarray
    chol: CholFactor
    alpha: np.ndarray
    cross: np.ndarray = field(default_factory=lambda: np.empty(0))
    r2_ra: np.ndarray = field(default_factory=lambda: np.empty(0))
    v_cols: np.ndarray = field(default_factory=lambda: np.empty(0))
    variances: np.ndarray = field(default_factory=lambda: np.empty(0))
    resid: np.ndarray = field(default_factory=lambda: np.empty(0))
    per_point: np.ndarray = field(default_factory=lambda: np.empty(0))
    term_active: float = 0.0
    term_conditional: float = 0.0


def _sas_forward(
    x_batch: np.ndarray, z_batch: np.ndarray, split: ActiveSplit, p: KernelParams, jitter: Jitter
) -> _SasForward:
    x_batch = np.atleast_2d(x_batch)
    z_batch = np.atleast_2d(z_batch)
    if x_batch.shape[0] != z_batch.shape[0]:
        raise DimensionMismatch("x_batch and z_batch row counts differ")
    if split.batch_size != x_batch.shape[0]:
        raise ValueError(f"split covers {split.batch_size} indices, batch has {x_batch.shape[0]}")
    d = x_batch.shape[1]
    x_a, x_r = x_batch[split.active], x_batch[split.holdout]
    z_a, z_r = z_batch[split.active], z_batch[split.holdout]

    r2_aa = sq_dists(z_a)
    k_nf = gram(z_a, p, add_noise=False, r2=r2_aa)
    f = _chol(k_nf + p.noise_variance * np.eye(z_a.shape[0], dtype=k_nf.dtype), jitter)
    alpha = linalg.solve(f, x_a)
    quad_a = float(np.sum(x_a * alpha))
    term_active = -0.5 * (d * x_a.shape[0] * LOG_2PI + d * f.logdet + quad_a)

    fwd = _SasForward(
        x_a=x_a, x_r=x_r, z_a=z_a, z_r=z_r, r2_aa=r2_aa, gram_nf=k_nf, chol=f, alpha=alpha,
        term_active=term_active,
    )
    if split.holdout.size:
        r2_ra = sq_dists(z_r, z_a)
        c = cross_gram(z_r, z_a, p, r2=r2_ra)
        v_cols = linalg.solve(f, c.T)
        variances = (p.amplitude + p.noise_variance) - np.einsum("ra,ar->r", c, v_cols)
        resid = x_r - c @ alpha
        per_point = -0.5 * (d * LOG_2PI + d * np.log(variances) + (resid**2).sum(axis=1) / variances)
        fwd.cross, fwd.r2_ra, fwd.v_cols = c, r2_ra, v_cols
        fwd.variances, fwd.resid, fwd.per_point = variances, resid, per_point
        fwd.term_conditional = float(per_point.sum())
    else:
        fwd.per_point = np.zeros(0, dtype=x_batch.dtype)
    return fwd


def _report(fwd: _SasForward, term: str) -> EstimatorReport:
    if term == "full":
        total = fwd.term_conditional + fwd.term_active
    elif term == "conditional":
        total = fwd.term_conditional
    elif term == "active":
        total = fwd.term_active
    else:
        raise ValueError(f"unknown term selector {term!r}")
    return EstimatorReport(
        total=total,
        term_conditional=fwd.term_conditional,
        term_active=fwd.term_active,
        per_point=fwd.per_point,
    )


def sas_estimate(
    x_batch: np.ndarray, z_batch: np.ndarray, split: ActiveSplit, p: KernelParams, jitter: Jitter = 0.0
) -> EstimatorReport:
    """Stochastic active-set estimate of the batch log-marginal likelihood.

    total = sum_{n in R} log p(x_n | x_A, z) + log p(x_A | z_A), with the
    hold-out factors treated as conditionally independent given the active
    set. One Cholesky of K_AA + sigma_n^2 I is shared by every term.
    """
    return _report(_sas_forward(x_batch, z_batch, split, p, jitter), "full")


def sas_grads(
    x_batch: np.ndarray,
    z_batch: np.ndarray,
    split: ActiveSplit,
    p: KernelParams,
    jitter: Jitter = 0.0,
    term: str = "full",
) -> tuple[EstimatorReport, np.ndarray, np.ndarray]:
    """SAS estimate plus analytic gradients w.r.t. (theta, z_batch).

    ``term`` selects which part of the objective the gradients (and the
    report's total) cover: "full", "conditional", or "active" (the ablation
    modes). Returns (report, dtheta(3,), dz(B, Q)) with dz rows aligned to
    the batch layout.
    """
    z_batch = np.atleast_2d(z_batch)
    fwd = _sas_forward(x_batch, z_batch, split, p, jitter)
    d = fwd.x_a.shape[1]
    use_active = term in ("full", "active")
    use_cond = term in ("full", "conditional") and split.holdout.size > 0

    g_kaa = np.zeros_like(fwd.gram_nf)
    dtheta = np.zeros(3)
    dz = np.zeros_like(z_batch)

    if use_active:
        kinv = linalg.inv_from_chol(fwd.chol)
        g_kaa += 0.5 * (fwd.alpha @ fwd.alpha.T - d * kinv)

    if use_cond:
        v = fwd.variances
        g_mean = fwd.resid / v[:, None]
        g_var = -0.5 * d / v + 0.5 * (fwd.resid**2).sum(axis=1) / v**2
        # K_AA paths: through alpha in the means, through K^-1 in the variances.
        g_kaa += -fwd.v_cols @ g_mean @ fwd.alpha.T
        g_kaa += (fwd.v_cols * g_var[None, :]) @ fwd.v_cols.T
        g_cross = g_mean @ fwd.alpha.T - 2.0 * g_var[:, None] * fwd.v_cols.T
        dt_c, dz_r, dz_a = cross_gram_backward(fwd.z_r, fwd.z_a, p, g_cross, cross=fwd.cross, r2=fwd.r2_ra)
        dtheta += dt_c
        # Direct hyperparameter paths of the variances: k(z_r, z_r) = sigma_a^2
        # and the additive sigma_n^2.
        dtheta[0] += p.amplitude * float(g_var.sum())
        dtheta[2] += p.noise_variance * float(g_var.sum())
        dz[split.holdout] += dz_r
        dz[split.active] += dz_a

    dt_g, dz_a2 = gram_backward(fwd.z_a, p, g_kaa, gram_nf=fwd.gram_nf, r2=fwd.r2_aa, with_noise=True)
    dtheta += dt_g
    dz[split.active] += dz_a2
    return _report(fwd, term), dtheta, dz


def exact_two_term(
    x_batch: np.ndarray, z_batch: np.ndarray, split: ActiveSplit, p: KernelParams, jitter: Jitter = 0.0
) -> float:
    """log p(x_R | x_A, z) + log p(x_A | z_A) with the full hold-out covariance.

    By the Gaussian chain rule this equals the exact log marginal of the whole
    batch for every split, so its gap to sas_estimate isolates the neglected
    cross-covariance among hold-out points.
    """
    x_batch = np.atleast_2d(x_batch)
    z_batch = np.atleast_2d(z_batch)
    fwd = _sas_forward(x_batch, z_batch, split, p, jitter)
    if not split.holdout.size:
        return fwd.term_active
    # Full predictive covariance over R; symmetrized because C K^-1 C^T is
    # only symmetric up to rounding.
    quad = fwd.cross @ fwd.v_cols
    s = gram(fwd.z_r, p, add_noise=True) - 0.5 * (quad + quad.T)
    f_s = _chol(s, jitter)
    term_joint = linalg.gaussian_logpdf_zero_mean(fwd.resid, f_s)
    return term_joint + fwd.term_active


def cv_score(
    x: np.ndarray,
    z: np.ndarray,
    p: KernelParams,
    r: int,
    mode: str = "exhaustive",
    num_permutations: int | None = None,
    rng: np.random.Generator | None = None,
    cap: int = CV_ENUM_CAP,
    jitter: Jitter = 0.0,
) -> float:
    """Leave-r-out CV score: the split-averaged mean log-predictive.

    S_CV(x | r) = (1/C) sum_splits (1/r) sum_{n in R} log p(x_n | x_A, z)
    over all C = C(N, r) hold-out sets ("exhaustive"), or an unbiased
    Monte-Carlo average over ``num_permutations`` uniformly drawn hold-out
    sets ("sampled").
    """
    x = np.atleast_2d(x)
    z = np.atleast_2d(z)
    n = x.shape[0]
    if not 1 <= r <= n:
        raise ValueError(f"hold-out size r={r} out of range for N={n}")
    idx = np.arange(n)
    if mode == "exhaustive":
        n_splits = math.comb(n, r)
        if n_splits > cap:
            raise CapExceeded(f"C({n},{r})={n_splits} exceeds the enumeration cap {cap}")
        total = 0.0
        for holdout in combinations(range(n), r):
            holdout = np.array(holdout, dtype=np.intp)
            active = np.setdiff1d(idx, holdout, assume_unique=True)
            total += float(_holdout_logpdfs(x, z, active, holdout, p, jitter).sum()) / r
        return total / n_splits
    if mode == "sampled":
        if rng is None or num_permutations is None:
            raise ValueError("sampled mode needs rng and num_permutations")
        total = 0.0
        for _ in range(num_permutations):
            holdout = np.sort(rng.choice(n, size=r, replace=False))
            active = np.setdiff1d(idx, holdout, assume_unique=True)
            total += float(_holdout_logpdfs(x, z, active, holdout, p, jitter).sum()) / r
        return total / num_permutations
    raise ValueError(f"unknown cv_score mode {mode!r}")


@dataclass(frozen=True)
class CvIdentityReport:
    """Exhaustive CV-vs-marginal check at tiny N.

    lhs is the exact log marginal; rhs = sum_r S_CV(x|r). s_ccv[R-1] and
    s_pcv[R-1] hold the cumulative and preparatory scores for hold-out size
    R, whose sum equals lhs for every R.
    """

    lhs: float
    rhs: float
    s_cv: np.ndarray
    s_ccv: np.ndarray
    s_pcv: np.ndarray


def cv_identity_check(
    x: np.ndarray, z: np.ndarray, p: KernelParams, jitter: Jitter = 0.0, n_cap: int = CV_IDENTITY_N_CAP
) -> CvIdentityReport:
    """Enumerate every subset to compare CV scores against the exact marginal."""
    x = np.atleast_2d(x)
    z = np.atleast_2d(z)
    n = x.shape[0]
    if n > n_cap:
        raise CapExceeded(f"N={n} exceeds the identity-check cap {n_cap}")
    lhs = exact_log_marginal(x, z, p, jitter)
    s_cv = np.array([cv_score(x, z, p, r, "exhaustive", jitter=jitter) for r in range(1, n + 1)])
    s_ccv = np.cumsum(s_cv)
    idx = np.arange(n)
    s_pcv = np.zeros(n)
    for hold_size in range(1, n + 1):
        total = 0.0
        count = 0
        for holdout in combinations(range(n), hold_size):
            active = np.setdiff1d(idx, np.array(holdout, dtype=np.intp), assume_unique=True)
            if active.size:
                f = _chol(gram(z[active], p, add_noise=True), jitter)
                total += linalg.gaussian_logpdf_zero_mean(x[active], f)
            count += 1
        s_pcv[hold_size - 1] = total / count
    return CvIdentityReport(lhs=lhs, rhs=float(s_cv.sum()), s_cv=s_cv, s_ccv=s_ccv, s_pcv=s_pcv)


def _cv_weighted_value(
    x: np.ndarray, z: np.ndarray, p: KernelParams, holdout: np.ndarray, jitter: Jitter
) -> float:
    n = x.shape[0]
    r = holdout.size
    active = np.setdiff1d(np.arange(n), holdout, assume_unique=True)
    return n / r * float(_holdout_logpdfs(x, z, active, holdout, p, jitter).sum())


def unbiased_marginal_sample(
    x: np.ndarray, z: np.ndarray, p: KernelParams, rng: np.random.Generator,
    jitter: Jitter = 0.0, cap: int = EXACT_CAP,
) -> float:
    """One stochastic draw whose expectation is exactly the log marginal.

    Draws the hold-out size r uniformly from {1..N}, then a uniform split,
    and returns N * (1/r) * sum_{n in R} log p(x_n | x_A, z).
    """
    x = np.atleast_2d(x)
    z = np.atleast_2d(z)
    n = x.shape[0]
    if n > cap:
        raise CapExceeded(f"N={n} exceeds the cap {cap}")
    r = int(rng.integers(1, n + 1))
    holdout = np.sort(rng.choice(n, size=r, replace=False))
    return _cv_weighted_value(x, z, p, holdout, jitter)


def unbiased_marginal_exhaustive_mean(
    x: np.ndarray, z: np.ndarray, p: KernelParams, jitter: Jitter = 0.0, n_cap: int = CV_IDENTITY_N_CAP
) -> float:
    """Average of unbiased_marginal_sample over every (r, split) draw.

    Enumerates the sampler's whole outcome space (uniform r, uniform split
    given r) so tests can verify unbiasedness without Monte-Carlo noise.
    """
    x = np.atleast_2d(x)
    z = np.atleast_2d(z)
    n = x.shape[0]
    if n > n_cap:
        raise CapExceeded(f"N={n} exceeds the enumeration cap {n_cap}")
    total = 0.0
    for r in range(1, n + 1):
        splits = list(combinations(range(n), r))
        inner = 0.0
        for holdout in splits:
            inner += _cv_weighted_value(x, z, p, np.array(holdout, dtype=np.intp), jitter)
        total += inner / len(splits)
    return total / n
