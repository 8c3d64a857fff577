"""Probability objects used throughout the propagation pipeline.

Gaussian mixtures here always share a single covariance matrix across
components; that is what keeps cell masses of eigenbasis-aligned rectangles
available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

WEIGHT_TOL = 1e-12
SYMMETRY_TOL = 1e-12
EIGEN_TOL = 1e-9


def _as_weights(weights, n: int | None = None) -> np.ndarray:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if n is not None and w.shape[0] != n:
        raise ValueError(f"expected {n} weights, got {w.shape[0]}")
    if w.size == 0:
        raise ValueError("distribution needs at least one atom/component")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
    return w


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Mixture ``sum_i w_i N(m_i, S)`` with one shared covariance ``S``.

    ``eigvals`` / ``eigvecs`` cache the eigendecomposition of ``S``
    (columns of ``eigvecs`` are the eigenvectors, eigenvalues ascending).
    """

    weights: np.ndarray
    means: np.ndarray
    covariance: np.ndarray
    eigvals: np.ndarray = field(init=False, repr=False)
    eigvecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        n = means.shape[1]
        if cov.shape != (n, n):
            raise ValueError(f"covariance shape {cov.shape} does not match dimension {n}")
        if not np.all(np.isfinite(means)) or not np.all(np.isfinite(cov)):
            raise ValueError("means and covariance must be finite")
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL:
            raise ValueError("covariance must be symmetric")
        weights = _as_weights(self.weights, means.shape[0])
        cov = 0.5 * (cov + cov.T)
        vals, vecs = np.linalg.eigh(cov)
        if vals[0] < -EIGEN_TOL * max(1.0, abs(vals[-1])):
            raise ValueError("covariance must be positive semidefinite")
        vals = np.clip(vals, 0.0, None)
        for name, arr in (("weights", weights), ("means", means), ("covariance", cov),
                          ("eigvals", vals), ("eigvecs", vecs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def gaussian(cls, mean, covariance) -> "GaussianMixture":
        return cls([1.0], np.atleast_2d(mean), covariance)

    @classmethod
    def diagonal(cls, mean, variances) -> "GaussianMixture":
        return cls.gaussian(mean, np.diag(np.asarray(variances, dtype=float)))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        return cls(d["weights"], d["means"], d["covariance"])


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Weighted point masses ``sum_i w_i delta_{c_i}``."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        locs = np.atleast_2d(np.asarray(self.locations, dtype=float))
        if not np.all(np.isfinite(locs)):
            raise ValueError("locations must be finite")
        weights = _as_weights(self.weights, locs.shape[0])
        locs.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def dirac(cls, point) -> "DiscreteDistribution":
        return cls(np.atleast_2d(point), [1.0])

    @classmethod
    def uniform(cls, points) -> "DiscreteDistribution":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def __len__(self) -> int:
        return self.locations.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.locations

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "locations": self.locations.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDistribution":
        return cls(d["locations"], d["weights"])


@dataclass(frozen=True, eq=False)
class AmbiguityBall:
    """All distributions within ``radius`` of ``center`` in rho-Wasserstein distance."""

    center: GaussianMixture
    radius: float
    order: int = 2

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError("ball radius must be finite and nonnegative")
        if int(self.order) != self.order or self.order < 1:
            raise ValueError("ball order must be a positive integer")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "order", int(self.order))

    def to_dict(self) -> dict:
        return {"center": self.center.to_dict(), "radius": self.radius, "order": self.order}

    @classmethod
    def from_dict(cls, d: dict) -> "AmbiguityBall":
        return cls(GaussianMixture.from_dict(d["center"]), d["radius"], d["order"])


def normalize_weights(w) -> np.ndarray:
    """Rescale nonnegative masses to a probability vector (absorbs float drift)."""
    w = np.asarray(w, dtype=float)
    return w / w.sum()


def mixture_moments(gmm: GaussianMixture) -> tuple[np.ndarray, np.ndarray]:
    mu = gmm.mean()
    dev = gmm.means - mu
    cov = gmm.covariance + (gmm.weights[:, None] * dev).T @ dev
    return mu, 0.5 * (cov + cov.T)


def convolve(d: DiscreteDistribution, noise: GaussianMixture) -> GaussianMixture:
    """Law of ``c + w`` with ``c ~ d`` and ``w ~ noise`` independent.

    Component ``(i, j)`` sits at ``c_i + m_j`` with weight ``p_i * v_j``;
    ordering is row-major in ``(i, j)``.
    """
    if d.dim != noise.dim:
        raise ValueError(f"dimension mismatch: discrete {d.dim} vs noise {noise.dim}")
    means = (d.locations[:, None, :] + noise.means[None, :, :]).reshape(-1, d.dim)
    weights = np.outer(d.weights, noise.weights).reshape(-1)
    return GaussianMixture(normalize_weights(weights), means, noise.covariance)


def sample(dist: GaussianMixture | DiscreteDistribution, n: int,
           seed: int | np.random.Generator) -> np.ndarray:
    """Draw ``n`` points; a component/atom index is drawn first, then the Gaussian offset.

    ``seed`` may also be a ``Generator``, which is then advanced in place.
    """
    if n < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    if isinstance(dist, DiscreteDistribution):
        idx = rng.choice(len(dist), size=n, p=dist.weights)
        return dist.locations[idx].copy()
    idx = rng.choice(dist.n_components, size=n, p=dist.weights)
    z = rng.standard_normal((n, dist.dim))
    # eigen-factor handles singular covariances: zero-variance axes stay fixed
    factor = dist.eigvecs * np.sqrt(dist.eigvals)
    return dist.means[idx] + z @ factor.T
