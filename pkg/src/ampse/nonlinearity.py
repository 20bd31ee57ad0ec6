"""Scalar denoisers applied componentwise, and their derivatives.

Each denoiser is evaluated as eta(x; theta) where theta is supplied by a
threshold policy: the threshold itself for soft thresholding, the
effective noise standard deviation for the posterior mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_model import PointMassMixture


def _check_theta(theta):
    if np.any(np.asarray(theta) < 0):
        raise ValueError("theta must be nonnegative")


@dataclass(frozen=True)
class SoftThreshold:
    """Shrink toward zero by theta; exactly zero on [-theta, theta]."""

    def evaluate(self, x, theta):
        _check_theta(theta)
        x = np.asarray(x, dtype=float)
        return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)

    def derivative(self, x, theta):
        """Slope in x: 1 outside the dead zone, 0 inside.

        The value at |x| = theta is fixed to 0; the kink set has measure
        zero under the continuous inputs this is averaged over.
        """
        _check_theta(theta)
        x = np.asarray(x, dtype=float)
        return (np.abs(x) > theta).astype(float)


@dataclass(frozen=True)
class PosteriorMean:
    """Conditional-mean denoiser E{X | X + sigma Z = x} for a point-mass prior.

    theta plays the role of the effective noise standard deviation sigma.
    Weights are combined in log space so widely separated atoms stay
    numerically stable.
    """

    prior: PointMassMixture

    def __post_init__(self):
        if not isinstance(self.prior, PointMassMixture):
            raise TypeError("PosteriorMean requires a point-mass mixture prior")

    def _posterior(self, x, sigma):
        a = self.prior.values
        p = self.prior.probs
        x = np.asarray(x, dtype=float)
        logits = np.log(p) - (x[..., None] - a) ** 2 / (2.0 * sigma**2)
        logits -= logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=-1, keepdims=True)
        return w, a

    def evaluate(self, x, theta):
        _check_theta(theta)
        x = np.asarray(x, dtype=float)
        if theta == 0:
            # Limit case: the posterior collapses onto the nearest atom.
            a = self.prior.values
            idx = np.argmin(np.abs(x[..., None] - a), axis=-1)
            return a[idx]
        w, a = self._posterior(x, theta)
        return w @ a

    def derivative(self, x, theta):
        """Slope in x: posterior variance divided by theta squared."""
        _check_theta(theta)
        x = np.asarray(x, dtype=float)
        if theta == 0:
            return np.zeros_like(x)
        w, a = self._posterior(x, theta)
        mean = w @ a
        var = w @ a**2 - mean**2
        return var / theta**2
