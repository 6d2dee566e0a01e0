"""Predictive-quality metrics and latent-structure evaluation.

Predictions follow the package's conditional convention: one mean per
(point, dimension) and one shared variance per point. All three error
metrics average over every (point, dimension) entry:

    rmse = sqrt(mean (x - mu*)^2)
    mae  = mean |x - mu*|
    nlpd = 1/2 log(2 pi) + 1/2 mean[ log v* + (x - mu*)^2 / v* ]

Latent structure is scored by 1-nearest-neighbour classification accuracy in
the latent space (Euclidean metric, ties broken by lowest training index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .linalg import LOG_2PI


@dataclass
class PredictiveOutput:
    """Predictive means (N*, D) and one shared variance (N*,) per test point."""

    mu_star: np.ndarray
    v_star: np.ndarray

    def __post_init__(self):
        self.mu_star = np.atleast_2d(self.mu_star)
        self.v_star = np.asarray(self.v_star)
        if self.v_star.shape != (self.mu_star.shape[0],):
            raise DimensionMismatch("v_star must hold one variance per prediction row")
        if np.any(self.v_star <= 0):
            raise ValueError("predictive variances must be positive")


def _check_aligned(x_test: np.ndarray, pred: PredictiveOutput) -> np.ndarray:
    x_test = np.atleast_2d(x_test)
    if x_test.shape != pred.mu_star.shape:
        raise DimensionMismatch(f"test data {x_test.shape} vs predictions {pred.mu_star.shape}")
    return x_test


def rmse(x_test: np.ndarray, pred: PredictiveOutput) -> float:
    x_test = _check_aligned(x_test, pred)
    return float(np.sqrt(np.mean((x_test - pred.mu_star) ** 2)))


def mae(x_test: np.ndarray, pred: PredictiveOutput) -> float:
    x_test = _check_aligned(x_test, pred)
    return float(np.mean(np.abs(x_test - pred.mu_star)))


def nlpd(x_test: np.ndarray, pred: PredictiveOutput) -> float:
    x_test = _check_aligned(x_test, pred)
    sq = (x_test - pred.mu_star) ** 2 / pred.v_star[:, None]
    return float(0.5 * LOG_2PI + 0.5 * np.mean(np.log(pred.v_star)[:, None] + sq))


def knn_accuracy(
    train_latents: np.ndarray,
    train_labels: np.ndarray,
    test_latents: np.ndarray,
    test_labels: np.ndarray,
) -> float:
    """Fraction of test points whose nearest training latent shares their label."""
    train_latents = np.atleast_2d(train_latents)
    test_latents = np.atleast_2d(test_latents)
    if train_latents.shape[1] != test_latents.shape[1]:
        raise DimensionMismatch("train/test latent dimensions differ")
    if train_labels.shape[0] != train_latents.shape[0] or test_labels.shape[0] != test_latents.shape[0]:
        raise DimensionMismatch("labels do not align with latents")
    # (N*, Ntr) squared distances; argmin returns the lowest index on ties.
    d2 = (
        np.sum(test_latents**2, axis=1)[:, None]
        - 2.0 * test_latents @ train_latents.T
        + np.sum(train_latents**2, axis=1)[None, :]
    )
    nearest = np.argmin(d2, axis=1)
    return float(np.mean(train_labels[nearest] == test_labels))
