"""Exponentiated-quadratic (RBF) covariance, matrix builders, and gradients.

One isotropic kernel is shared across all output dimensions:

    k(z, z') = sigma_a^2 * exp(-||z - z'||^2 / (2 l^2))

Hyperparameters live in log-space so that unconstrained gradient steps keep
sigma_a^2, l, sigma_n^2 strictly positive. Besides the forward builders this
module owns the closed-form derivatives of kernel matrices w.r.t. the log
hyperparameters and the latent inputs, plus the reverse-mode "chain" helpers
(`gram_backward`, `cross_gram_backward`) that contract an upstream d(objective)/dK
matrix down to parameter space without materializing per-latent kernel
derivative tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Default hyperparameters: amplitude 0.5, lengthscale 0.1, noise variance 0.5.
DEFAULT_AMPLITUDE = 0.5
DEFAULT_LENGTHSCALE = 0.1
DEFAULT_NOISE_VARIANCE = 0.5

# Index order for 3-vector gradients w.r.t. the log hyperparameters.
THETA_NAMES = ("log_amplitude", "log_lengthscale", "log_noise")


@dataclass(frozen=True)
class KernelParams:
    """RBF hyperparameters stored in unconstrained log-space.

    amplitude = exp(log_amplitude) is the signal variance sigma_a^2,
    lengthscale = exp(log_lengthscale), noise_variance = exp(log_noise).
    """

    log_amplitude: float = math.log(DEFAULT_AMPLITUDE)
    log_lengthscale: float = math.log(DEFAULT_LENGTHSCALE)
    log_noise: float = math.log(DEFAULT_NOISE_VARIANCE)

    @property
    def amplitude(self) -> float:
        return math.exp(self.log_amplitude)

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise)

    @classmethod
    def from_values(
        cls,
        amplitude: float = DEFAULT_AMPLITUDE,
        lengthscale: float = DEFAULT_LENGTHSCALE,
        noise_variance: float = DEFAULT_NOISE_VARIANCE,
    ) -> "KernelParams":
        return cls(math.log(amplitude), math.log(lengthscale), math.log(noise_variance))

    def to_vector(self) -> np.ndarray:
        return np.array([self.log_amplitude, self.log_lengthscale, self.log_noise])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "KernelParams":
        return cls(float(vec[0]), float(vec[1]), float(vec[2]))


def sq_dists(z1: np.ndarray, z2: np.ndarray | None = None) -> np.ndarray:
    """Pairwise squared Euclidean distances.

    Computed from explicit differences so the result is exactly symmetric
    with an exactly zero diagonal when z2 is z1 (the dot-product shortcut
    is not bitwise symmetric).
    """
    z1 = np.atleast_2d(z1)
    z2 = z1 if z2 is None else np.atleast_2d(z2)
    diff = z1[:, None, :] - z2[None, :, :]
    return np.einsum("ijq,ijq->ij", diff, diff)


def kernel_eval(z1: np.ndarray, z2: np.ndarray, p: KernelParams) -> float:
    """Kernel value for a single pair of latent points."""
    z1 = np.asarray(z1, dtype=float).ravel()
    z2 = np.asarray(z2, dtype=float).ravel()
    if z1.shape != z2.shape:
        raise ValueError(f"latent points have different dims {z1.shape} vs {z2.shape}")
    d2 = float(np.sum((z1 - z2) ** 2))
    return p.amplitude * math.exp(-d2 / (2.0 * p.lengthscale**2))


def gram(z: np.ndarray, p: KernelParams, add_noise: bool = False, r2: np.ndarray | None = None) -> np.ndarray:
    """Kernel matrix over one point set; diagonal += sigma_n^2 when add_noise."""
    z = np.atleast_2d(z)
    if r2 is None:
        r2 = sq_dists(z)
    k = p.amplitude * np.exp(-r2 / (2.0 * p.lengthscale**2))
    if add_noise:
        k = k + p.noise_variance * np.eye(z.shape[0], dtype=k.dtype)
    return k


def cross_gram(zr: np.ndarray, za: np.ndarray, p: KernelParams, r2: np.ndarray | None = None) -> np.ndarray:
    """Rectangular kernel matrix between two point sets; never noised."""
    if r2 is None:
        r2 = sq_dists(zr, za)
    return p.amplitude * np.exp(-r2 / (2.0 * p.lengthscale**2))


@dataclass(frozen=True)
class KernelGrads:
    """Entrywise kernel-matrix derivatives for one point set.

    d_z[i, j, q] is the derivative of K[i, j] w.r.t. z[i, q]; by symmetry of
    the kernel, the derivative w.r.t. z[j, q] is its negation.
    """

    d_log_amplitude: np.ndarray
    d_log_lengthscale: np.ndarray
    d_z: np.ndarray


def kernel_grads(z: np.ndarray, p: KernelParams) -> KernelGrads:
    """Closed-form derivatives of the (noise-free) gram matrix."""
    z = np.atleast_2d(z)
    r2 = sq_dists(z)
    k = gram(z, p, add_noise=False, r2=r2)
    ls2 = p.lengthscale**2
    diff = z[:, None, :] - z[None, :, :]
    return KernelGrads(
        d_log_amplitude=k.copy(),
        d_log_lengthscale=k * r2 / ls2,
        d_z=-k[:, :, None] * diff / ls2,
    )


def gram_backward(
    z: np.ndarray,
    p: KernelParams,
    grad: np.ndarray,
    gram_nf: np.ndarray,
    r2: np.ndarray,
    with_noise: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Contract d(objective)/dK over a square gram to (theta, z) space.

    ``grad`` treats the entries of K as independent (the convention produced
    by matrix-calculus identities like d log|K| = tr(K^-1 dK)); ``gram_nf``
    and ``r2`` are the noise-free gram and squared distances already computed
    in the forward pass. Returns (dtheta(3,), dz(M, Q)); dtheta[2] covers the
    sigma_n^2 I diagonal iff with_noise.
    """
    ls2 = p.lengthscale**2
    gk = grad * gram_nf
    d_amp = float(np.sum(gk))
    d_ls = float(np.sum(gk * r2)) / ls2
    d_noise = p.noise_variance * float(np.trace(grad)) if with_noise else 0.0
    h = (grad + grad.T) * gram_nf
    dz = (h @ z - h.sum(axis=1)[:, None] * z) / ls2
    return np.array([d_amp, d_ls, d_noise]), dz


def cross_gram_backward(
    zr: np.ndarray,
    za: np.ndarray,
    p: KernelParams,
    grad: np.ndarray,
    cross: np.ndarray,
    r2: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Contract d(objective)/dC over a rectangular gram to (theta, zr, za)."""
    ls2 = p.lengthscale**2
    hc = grad * cross
    d_amp = float(np.sum(hc))
    d_ls = float(np.sum(hc * r2)) / ls2
    dzr = (hc @ za - hc.sum(axis=1)[:, None] * zr) / ls2
    dza = (hc.T @ zr - hc.sum(axis=0)[:, None] * za) / ls2
    return np.array([d_amp, d_ls, 0.0]), dzr, dza
