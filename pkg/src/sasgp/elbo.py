"""Mean-field variational treatment of the latent variables.

Each latent point gets an independent Gaussian posterior q(z_n) =
N(mu_n, diag(sigma_n^2)) against the isotropic N(0, I) prior. The ELBO
estimate combines reparameterized single-sample expectations of the two
active-set terms with the closed-form KL

    KL_n = 1/2 sum_q (mu^2 + sigma^2 - 1 - log sigma^2),

which is never sampled. One joint z-draw is shared by the active term and
all hold-out conditionals within a split; under mini-batching the KL sum
over the batch is scaled up to the full dataset by the caller via
``kl_scale`` (N/B).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import ActiveSplit, EstimatorReport, Jitter, sas_estimate, sas_grads
from .kernel import KernelParams


@dataclass
class VariationalPosterior:
    """Per-point Gaussian posterior parameters; variances are exp(log_var)."""

    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ValueError("mu and log_var must have matching shapes")

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


def kl_to_standard_normal(q: VariationalPosterior) -> np.ndarray:
    """Per-point KL[q(z_n) || N(0, I)], non-negative, zero iff q is the prior."""
    var = q.var
    return 0.5 * np.sum(q.mu**2 + var - 1.0 - q.log_var, axis=1)


def kl_grads(q: VariationalPosterior) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of sum_n KL_n w.r.t. (mu, log_var)."""
    return q.mu.copy(), 0.5 * (q.var - 1.0)


def reparam_sample(
    q: VariationalPosterior, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw z = mu + sigma * eps with eps ~ N(0, I); eps is returned so the
    draw stays differentiable w.r.t. (mu, log_var) at fixed noise."""
    eps = rng.standard_normal(q.mu.shape).astype(q.mu.dtype, copy=False)
    return q.mu + q.sigma * eps, eps


def elbo_terms_and_grads(
    x_batch: np.ndarray,
    q: VariationalPosterior,
    split: ActiveSplit,
    p: KernelParams,
    eps: np.ndarray,
    kl_scale: float = 1.0,
    jitter: Jitter = 0.0,
) -> tuple[EstimatorReport, np.ndarray, np.ndarray, np.ndarray]:
    """Single-sample ELBO at fixed reparameterization noise, with gradients.

    Returns (report, dtheta(3,), d_mu(B, Q), d_log_var(B, Q)); report.total is
    the data terms at z = mu + sigma*eps minus kl_scale * sum_n KL_n.
    """
    sigma = q.sigma
    z = q.mu + sigma * eps
    report, dtheta, dz = sas_grads(x_batch, z, split, p, jitter)
    kl = float(kl_to_standard_normal(q).sum())
    d_mu_kl, d_lv_kl = kl_grads(q)
    d_mu = dz - kl_scale * d_mu_kl
    d_log_var = dz * (0.5 * sigma * eps) - kl_scale * d_lv_kl
    out = EstimatorReport(
        total=report.total - kl_scale * kl,
        term_conditional=report.term_conditional,
        term_active=report.term_active,
        per_point=report.per_point,
        kl_total=kl,
    )
    return out, dtheta, d_mu, d_log_var


def elbo_estimate(
    x_batch: np.ndarray,
    q: VariationalPosterior,
    split: ActiveSplit,
    p: KernelParams,
    rng: np.random.Generator,
    num_mc: int = 1,
    kl_scale: float = 1.0,
    jitter: Jitter = 0.0,
) -> EstimatorReport:
    """Monte-Carlo ELBO estimate averaged over ``num_mc`` joint z-samples."""
    if num_mc < 1:
        raise ValueError("num_mc must be at least 1")
    term_c = 0.0
    term_a = 0.0
    per_point = None
    for _ in range(num_mc):
        z, _ = reparam_sample(q, rng)
        rep = sas_estimate(x_batch, z, split, p, jitter)
        term_c += rep.term_conditional
        term_a += rep.term_active
        per_point = rep.per_point if per_point is None else per_point + rep.per_point
    term_c /= num_mc
    term_a /= num_mc
    kl = float(kl_to_standard_normal(q).sum())
    return EstimatorReport(
        total=term_c + term_a - kl_scale * kl,
        term_conditional=term_c,
        term_active=term_a,
        per_point=None if per_point is None else per_point / num_mc,
        kl_total=kl,
    )
