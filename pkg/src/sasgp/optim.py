"""Named parameter collections, Adam, and the finite-difference harness.

Objectives throughout the package are maximized by minimizing their
negation; the trainer owns that sign flip, so adam_step always descends the
gradients stored in the ParamSet. The finite-difference checker is the
oracle for every analytic gradient path (kernel, estimators, ELBO, encoder).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NonFiniteGradient


class ParamSet:
    """Named parameter tensors with parallel gradient and Adam-moment buffers."""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params: dict[str, np.ndarray] = {k: np.array(v, copy=True) for k, v in params.items()}
        self.grads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.m: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.t: int = 0

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def add_grad(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def copy(self) -> "ParamSet":
        dup = ParamSet(self.params)
        dup.grads = {k: v.copy() for k, v in self.grads.items()}
        dup.m = {k: v.copy() for k, v in self.m.items()}
        dup.v = {k: v.copy() for k, v in self.v.items()}
        dup.t = self.t
        return dup

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


def adam_step(
    ps: ParamSet, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> ParamSet:
    """One bias-corrected Adam descent step on every tensor; zeroes the grads."""
    for name, g in ps.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient for {name!r} contains NaN/Inf at step {ps.t + 1}")
    ps.t += 1
    bc1 = 1.0 - beta1**ps.t
    bc2 = 1.0 - beta2**ps.t
    for name, p in ps.params.items():
        g = ps.grads[name]
        m = ps.m[name]
        v = ps.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    ps.zero_grads()
    return ps


Objective = Callable[[ParamSet], tuple[float, dict[str, np.ndarray]]]


def grad_check(
    objective: Objective,
    ps: ParamSet,
    h: float = 1e-5,
    sample: int = 30,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``objective(ps)`` must return (value, grads-by-name) and be deterministic.
    ``sample`` coordinates are drawn without replacement across all tensors;
    the error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    _, grads = objective(ps)
    names = sorted(ps.params)
    sizes = [ps.params[n].size for n in names]
    total = int(np.sum(sizes))
    picks = rng.choice(total, size=min(sample, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in np.sort(picks):
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[slot]
        idx = int(flat - offsets[slot])
        view = ps.params[name].reshape(-1)
        orig = view[idx]
        view[idx] = orig + h
        f_plus = objective(ps)[0]
        view[idx] = orig - h
        f_minus = objective(ps)[0]
        view[idx] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(grads[name].reshape(-1)[idx])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
