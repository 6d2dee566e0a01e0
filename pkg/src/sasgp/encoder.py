"""Amortization networks and the non-amortized free-parameter fallback.

The encoder is a 3-layer fully connected MLP, input -> 512 -> 256 -> Q, with
ReLU after the first two layers and a linear output. Deterministic mode uses
one network for the latent coordinates; Bayesian mode runs a second network
of the same architecture whose output passes through a softplus (floored at
VAR_FLOOR) to give per-point variances. Reverse-mode gradients of both
stacks are hand-rolled here; there is no autodiff tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elbo import VariationalPosterior
from .errors import DimensionMismatch

HIDDEN_SIZES = (512, 256)
VAR_FLOOR = 1e-6


@dataclass
class MlpParams:
    """Weights and biases of the fully connected stack; x maps as x @ W + b."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]


def init_mlp(
    d_in: int,
    d_out: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = HIDDEN_SIZES,
    dtype=np.float64,
) -> MlpParams:
    """Uniform +-1/sqrt(fan_in) initialization for every weight and bias."""
    sizes = (d_in, *hidden, d_out)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        b = rng.uniform(-bound, bound, size=fan_out).astype(dtype)
        layers.append((w, b))
    return MlpParams(layers=layers)


def mlp_forward(x: np.ndarray, mlp: MlpParams) -> tuple[np.ndarray, list]:
    """Forward pass returning the output and the activations needed by backward."""
    x = np.atleast_2d(x)
    if x.shape[1] != mlp.input_dim:
        raise DimensionMismatch(f"input dim {x.shape[1]} != first layer dim {mlp.input_dim}")
    cache = [x]
    h = x
    last = len(mlp.layers) - 1
    for i, (w, b) in enumerate(mlp.layers):
        pre = h @ w + b
        h = pre if i == last else np.maximum(pre, 0.0)
        cache.append(h)
    return h, cache


def mlp_backward(
    mlp: MlpParams, cache: list, d_out: np.ndarray, need_input_grad: bool = False
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray | None]:
    """Exact reverse-mode gradients of the stack.

    ``cache`` is the list produced by mlp_forward (input plus each layer's
    post-activation); ReLU takes subgradient 0 at 0. Returns per-layer
    (dW, db) and, optionally, the gradient w.r.t. the input batch.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(mlp.layers)  # type: ignore[list-item]
    delta = np.atleast_2d(d_out)
    for i in range(len(mlp.layers) - 1, -1, -1):
        w, _ = mlp.layers[i]
        inp = cache[i]
        if i != len(mlp.layers) - 1:
            delta = delta * (cache[i + 1] > 0)
        grads[i] = (inp.T @ delta, delta.sum(axis=0))
        if i > 0 or need_input_grad:
            delta = delta @ w.T
    return grads, (delta if need_input_grad else None)


def encode(x_batch: np.ndarray, params: MlpParams) -> np.ndarray:
    """Deterministic encoding of a batch to latent coordinates."""
    out, _ = mlp_forward(x_batch, params)
    return out


def softplus(s: np.ndarray) -> np.ndarray:
    # log(1 + e^s) computed without overflow for large |s|.
    return np.logaddexp(0.0, s)


def encode_gaussian(
    x_batch: np.ndarray, params_mu: MlpParams, params_sigma: MlpParams
) -> VariationalPosterior:
    """Encode a batch to variational means and (floored softplus) variances."""
    q, _, _, _ = encode_gaussian_forward(x_batch, params_mu, params_sigma)
    return q


def encode_gaussian_forward(
    x_batch: np.ndarray, params_mu: MlpParams, params_sigma: MlpParams
) -> tuple[VariationalPosterior, list, list, np.ndarray]:
    """encode_gaussian plus the caches and raw variance-head output."""
    mu, cache_mu = mlp_forward(x_batch, params_mu)
    s, cache_s = mlp_forward(x_batch, params_sigma)
    var = np.maximum(softplus(s), VAR_FLOOR)
    q = VariationalPosterior(mu=mu, log_var=np.log(var))
    return q, cache_mu, cache_s, s


def encode_gaussian_backward(
    params_mu: MlpParams,
    params_sigma: MlpParams,
    cache_mu: list,
    cache_s: list,
    s: np.ndarray,
    d_mu: np.ndarray,
    d_log_var: np.ndarray,
) -> tuple[list[tuple[np.ndarray, np.ndarray]], list[tuple[np.ndarray, np.ndarray]]]:
    """Backpropagate (d_mu, d_log_var) into both network stacks.

    The variance head chains log_var = log(max(softplus(s), VAR_FLOOR)), so
    d log_var / d s = sigmoid(s) / softplus(s) wherever the floor is inactive
    and 0 where it clips.
    """
    sp = softplus(s)
    active = sp > VAR_FLOOR
    d_s = np.where(active, d_log_var * _sigmoid(s) / np.maximum(sp, VAR_FLOOR), 0.0)
    grads_mu, _ = mlp_backward(params_mu, cache_mu, d_mu)
    grads_s, _ = mlp_backward(params_sigma, cache_s, d_s)
    return grads_mu, grads_s


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


@dataclass
class LatentParamTable:
    """Free per-datum latent parameters for the non-amortized mode.

    ``mean`` holds z itself (deterministic) or the variational means; the
    Bayesian variant adds per-point log-variances.
    """

    mean: np.ndarray
    log_var: np.ndarray | None = None


def init_latent_table(
    n: int, q: int, rng: np.random.Generator, bayesian: bool = False, dtype=np.float64
) -> LatentParamTable:
    """Means from N(0, 0.01 I); Bayesian log-variances start at log(0.1)."""
    mean = (0.1 * rng.standard_normal((n, q))).astype(dtype)
    log_var = np.full((n, q), np.log(0.1), dtype=dtype) if bayesian else None
    return LatentParamTable(mean=mean, log_var=log_var)
