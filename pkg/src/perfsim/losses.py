"""Loss models with exact gradients and declared convexity constants.

Two losses are provided: a scalar quadratic loss for mean estimation and an
L2-regularized logistic loss for linear classification. Both expose the
constants needed by step-size selection and by the convergence diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "Sample",
    "QuadraticLoss",
    "LogisticLoss",
    "LossModel",
    "mean_grad",
    "mean_loss",
    "logistic_constants",
]


@dataclass(slots=True)
class Sample:
    """One observation handed to the learner.

    Classification samples carry ``features`` (length-d vector) and a 0/1
    ``label``; scalar mean-estimation samples carry ``scalar`` and leave the
    other fields unset.
    """

    features: Optional[np.ndarray] = None
    label: Optional[int] = None
    scalar: Optional[float] = None


def sigmoid(u):
    """Overflow-safe logistic function, elementwise."""
    return np.exp(-np.logaddexp(0.0, -u))


def log1pexp(u):
    """Overflow-safe ``log(1 + exp(u))``, elementwise."""
    return np.logaddexp(0.0, u)


class QuadraticLoss:
    """Squared-residual loss ``(z - theta)^2 / 2`` on scalar samples (d = 1)."""

    mu = 1.0
    lipschitz = 1.0

    def loss(self, theta: np.ndarray, sample: Sample) -> float:
        z = self._scalar(sample)
        if theta.shape != (1,):
            raise ValueError(f"quadratic loss expects theta of length 1, got {theta.shape}")
        r = z - theta[0]
        return 0.5 * r * r

    def grad(self, theta: np.ndarray, sample: Sample) -> np.ndarray:
        return theta - self._scalar(sample)

    @staticmethod
    def _scalar(sample: Sample) -> float:
        if sample.scalar is None:
            raise ValueError("quadratic loss expects scalar samples")
        return sample.scalar

    def sample_smoothness(self, sample: Sample) -> float:
        return 1.0

    def __repr__(self):
        return "QuadraticLoss()"


class LogisticLoss:
    """L2-regularized logistic loss on feature/label samples.

    ``loss(theta; (x, y)) = beta/2 ||theta||^2 + log(1 + exp(<theta, x>)) - y <theta, x>``

    The model is ``beta``-strongly convex in theta; its per-sample gradient
    smoothness is ``beta + ||x||^2 / 4``.
    """

    def __init__(self, beta: float):
        if beta < 0:
            raise ValueError("beta must be >= 0")
        self.beta = float(beta)

    @property
    def mu(self) -> float:
        return self.beta

    def loss(self, theta: np.ndarray, sample: Sample) -> float:
        x, y = self._features(theta, sample)
        u = float(theta @ x)
        return 0.5 * self.beta * float(theta @ theta) + float(log1pexp(u)) - y * u

    def grad(self, theta: np.ndarray, sample: Sample) -> np.ndarray:
        x, y = self._features(theta, sample)
        u = float(theta @ x)
        return self.beta * theta + (float(sigmoid(u)) - y) * x

    @staticmethod
    def _features(theta, sample: Sample):
        if sample.features is None or sample.label is None:
            raise ValueError("logistic loss expects feature/label samples")
        x = sample.features
        if x.shape != theta.shape:
            raise ValueError(f"feature shape {x.shape} does not match theta shape {theta.shape}")
        return x, float(sample.label)

    def sample_smoothness(self, sample: Sample) -> float:
        x = sample.features
        return self.beta + float(x @ x) / 4.0

    def __repr__(self):
        return f"LogisticLoss(beta={self.beta!r})"


LossModel = Union[QuadraticLoss, LogisticLoss]


def mean_grad(model: LossModel, theta: np.ndarray, dataset: Sequence[Sample]) -> np.ndarray:
    """Arithmetic mean of the per-sample gradient over ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("mean_grad requires a non-empty dataset")
    total = model.grad(theta, dataset[0]).copy()
    for sample in dataset[1:]:
        total += model.grad(theta, sample)
    return total / len(dataset)


def mean_loss(model: LossModel, theta: np.ndarray, dataset: Sequence[Sample]) -> float:
    """Arithmetic mean of the loss over ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("mean_loss requires a non-empty dataset")
    return sum(model.loss(theta, s) for s in dataset) / len(dataset)


def mean_smoothness(model: LossModel, dataset: Sequence[Sample]) -> float:
    """Smoothness constant of the dataset-averaged gradient map."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return sum(model.sample_smoothness(s) for s in dataset) / len(dataset)


def logistic_constants(features: np.ndarray, beta: float, epsilon: float):
    """Schedule constants (L, mu_tilde) estimated from a feature matrix.

    For an m x d matrix ``X`` the global gradient-Lipschitz estimate is
    ``L = sqrt(2 beta m + ||X||_F^2 / 2)`` and the effective contraction
    modulus is ``mu_tilde = (1 - epsilon) beta - epsilon ||X||_F^2 / (4 m)``.
    These are the estimates used to set inverse schedules for the strategic
    classification presets.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be an m x d matrix")
    m = X.shape[0]
    fro2 = float(np.sum(X * X))
    lipschitz = float(np.sqrt(2.0 * beta * m + fro2 / 2.0))
    mu_tilde = (1.0 - epsilon) * beta - epsilon * fro2 / (4.0 * m)
    return lipschitz, mu_tilde
