"""Dense symmetric linear algebra and Gaussian log-density primitives.

Everything downstream (marginal likelihoods, predictive conditionals,
CV scores, the ELBO) is built from the three operations here: a jittered
Cholesky factorization, triangular solves against the factor, and the
zero-mean multi-output Gaussian log density

    log N(x | 0, K) = -DN/2 log 2pi - D/2 log|K| - 1/2 tr(K^-1 x x^T)

for x of shape (N, D) sharing one covariance across columns.

All routines are pure and work in the dtype of their inputs (float64 or
float32); the heavy lifting is delegated to LAPACK via scipy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular Cholesky factor with its cached log-determinant.

    ``lower @ lower.T`` reconstructs the (jittered) input matrix and
    ``logdet`` is log|M + jitter*I| = 2 * sum(log(diag(lower))).
    """

    n: int
    lower: np.ndarray
    logdet: float


def _check_symmetric(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    scale = np.abs(m).max()
    rtol = 1e-12 if m.dtype == np.float64 else 1e-5
    if scale > 0 and np.abs(m - m.T).max() > rtol * scale:
        raise ValueError("matrix is not symmetric within tolerance")


def default_jitter(m: np.ndarray) -> float:
    """Default diagonal increment: 1e-6 times the mean diagonal entry."""
    return 1e-6 * float(np.mean(np.diag(m)))


def cholesky(m: np.ndarray, jitter: float = 0.0) -> CholFactor:
    """Factor ``m + jitter*I`` as L L^T with L lower triangular.

    Raises NotPositiveDefinite when a pivot is non-positive even after the
    jitter; never returns NaNs. The caller may retry with a larger jitter
    (see robust_cholesky).
    """
    _check_symmetric(m)
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    a = m if jitter == 0.0 else m + np.asarray(jitter, dtype=m.dtype) * np.eye(m.shape[0], dtype=m.dtype)
    try:
        lower = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky failed at jitter={jitter:g}: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return CholFactor(n=m.shape[0], lower=lower, logdet=logdet)


def robust_cholesky(m: np.ndarray, base_jitter: float | None = None, retries: int = 3) -> CholFactor:
    """Cholesky with the automatic jitter policy.

    Starts at ``base_jitter`` (default 1e-6 * mean diagonal) and escalates
    by x10 up to ``retries`` times before giving up.
    """
    jitter = default_jitter(m) if base_jitter is None else base_jitter
    if jitter <= 0.0:
        jitter = float(np.finfo(m.dtype).tiny)  # degenerate all-zero diagonal
    try:
        return cholesky(m, 0.0)
    except NotPositiveDefinite:
        pass
    for attempt in range(retries + 1):
        try:
            return cholesky(m, jitter)
        except NotPositiveDefinite:
            if attempt == retries:
                raise
            jitter *= 10.0
    raise AssertionError("unreachable")


def solve(f: CholFactor, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b for x, given the factor of the matrix."""
    b = np.asarray(b)
    if b.shape[0] != f.n:
        raise DimensionMismatch(f"rhs has leading dim {b.shape[0]}, factor has {f.n}")
    return scipy.linalg.cho_solve((f.lower, True), b, check_finite=False)


def inv_from_chol(f: CholFactor) -> np.ndarray:
    """Dense inverse of the factored matrix (used by gradient assembly)."""
    eye = np.eye(f.n, dtype=f.lower.dtype)
    return scipy.linalg.cho_solve((f.lower, True), eye, check_finite=False)


def gaussian_logpdf_zero_mean(x: np.ndarray, f: CholFactor) -> float:
    """log N(x | 0, K) summed over the D columns of x, K given by its factor.

    Equals sum_d log N(x[:, d] | 0, K); x may be (N,) or (N, D).
    """
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n != f.n:
        raise DimensionMismatch(f"x has {n} rows, factor has dimension {f.n}")
    w = solve(f, x)
    quad = float(np.sum(x * w))
    return -0.5 * (d * n * LOG_2PI + d * f.logdet + quad)


def gaussian_logpdf_cov_grad(x: np.ndarray, f: CholFactor) -> np.ndarray:
    """Gradient of gaussian_logpdf_zero_mean w.r.t. the covariance entries.

    Returns the full-matrix derivative 1/2 (alpha alpha^T - D K^-1) with
    alpha = K^-1 x, valid for an arbitrary (not-necessarily-symmetric)
    perturbation dK.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[:, None]
    d = x.shape[1]
    alpha = solve(f, x)
    return 0.5 * (alpha @ alpha.T - d * inv_from_chol(f))
