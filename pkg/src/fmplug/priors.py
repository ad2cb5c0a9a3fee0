"""Desk-scale data distributions with closed-form velocity fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.fft import dct

from .flow import (GaussianPrior, GaussianVelocityField, GMMPrior, GMMVelocityField,
                   MLPVelocityField)


@dataclass(frozen=True)
class PriorBundle:
    """A named field plus what the harness needs to draw ground truth."""

    name: str
    field: object
    distribution: Optional[object]  # GaussianPrior / GMMPrior, or None for learned fields
    image_shape: Optional[Tuple[int, int]] = None

    @property
    def dim(self) -> int:
        return self.field.dim

    def sample(self, n: int, rng: np.random.Generator, generator=None) -> np.ndarray:
        if self.distribution is not None:
            return self.distribution.sample(n, rng)
        from .generator import sample
        return sample(generator, n, rng)

    def rms_norm(self) -> Optional[float]:
        dist = self.distribution
        if isinstance(dist, GMMPrior):
            return float(np.sqrt(dist.second_moment()))
        if isinstance(dist, GaussianPrior):
            return float(np.sqrt(dist.mean @ dist.mean + np.trace(dist.cov)))
        return None


def standard_gaussian(dim: int) -> GaussianPrior:
    return GaussianPrior(np.zeros(dim), np.eye(dim), eig=(np.ones(dim), np.eye(dim)))


def lowrank_gaussian(dim: int, rank: int, floor: float = 1e-4, seed: int = 0,
                     scale: float = 1.0) -> GaussianPrior:
    """Random mean, covariance ``Q diag(lam) Q^T`` with ``rank`` O(1) directions and a floor."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    lam = np.full(dim, floor)
    lam[:rank] = scale * rng.uniform(0.5, 1.5, rank)
    mean = 0.5 * rng.standard_normal(dim)
    return GaussianPrior(mean, (q * lam) @ q.T, eig=(lam, q))


def dct_basis(side: int) -> np.ndarray:
    """Columns are the orthonormal 2-D DCT-II basis images, flattened row-major."""
    d1 = dct(np.eye(side), norm="ortho", axis=0).T  # columns: 1-D basis vectors
    return np.kron(d1, d1)


def smooth_image_gmm(side: int = 16, components: int = 4, seed: int = 0,
                     pixel_std: float = 0.12, floor: float = 1e-4) -> GMMPrior:
    """Mixture of smooth random images in roughly ``[0, 1]``.

    Every component is diagonal in the DCT basis with a Gaussian spectral
    envelope; components differ in their mean image and envelope width.
    """
    rng = np.random.default_rng(seed)
    basis = dct_basis(side)
    fu, fv = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    rad2 = (fu ** 2 + fv ** 2).ravel().astype(float)
    d = side * side
    comps = []
    for k in range(components):
        width = rng.uniform(1.5, 3.0)
        env = np.exp(-0.5 * rad2 / width ** 2)
        env[0] = 0.0  # brightness variation comes from the mean
        lam = env * (pixel_std ** 2 * d / env.sum()) + floor
        coeffs = np.zeros(d)
        low = rad2 <= 4.0
        coeffs[low] = rng.standard_normal(low.sum()) * 1.2
        coeffs[0] = 0.5 * side
        mean = basis @ coeffs
        comps.append(GaussianPrior(mean, (basis * lam) @ basis.T, eig=(lam, basis)))
    return GMMPrior(np.full(components, 1.0 / components), comps)


def bump_gmm(dim: int = 32, components: int = 8, width: float = 2.0, amp: float = 1.0,
             jitter: float = 0.05, seed: int = 0) -> GMMPrior:
    """1-D signals with one Gaussian bump; components sit at evenly spaced positions.

    Each component varies around its bump by smooth (low-frequency DCT)
    perturbations of size ``jitter``.
    """
    rng = np.random.default_rng(seed)
    grid = np.arange(dim)
    centers = np.linspace(0.15 * dim, 0.85 * dim, components)
    d1 = dct(np.eye(dim), norm="ortho", axis=0).T
    freq = np.arange(dim)
    lam = jitter ** 2 * dim * np.exp(-0.5 * (freq / 3.0) ** 2)
    lam = lam / np.exp(-0.5 * (freq / 3.0) ** 2).sum() + 1e-4
    comps = []
    for c in centers:
        mean = amp * np.exp(-0.5 * ((grid - c + rng.uniform(-0.2, 0.2)) / width) ** 2)
        comps.append(GaussianPrior(mean, (d1 * lam) @ d1.T, eig=(lam, d1)))
    return GMMPrior(np.full(components, 1.0 / components), comps)


def bundle(name: str, dist, image_shape=None) -> PriorBundle:
    if isinstance(dist, GMMPrior):
        field = GMMVelocityField(dist)
    elif isinstance(dist, GaussianPrior):
        field = GaussianVelocityField(dist)
    elif isinstance(dist, MLPVelocityField):
        return PriorBundle(name, dist, None, image_shape)
    else:
        raise TypeError(f"cannot build a field for {type(dist).__name__}")
    return PriorBundle(name, field, dist, image_shape)
