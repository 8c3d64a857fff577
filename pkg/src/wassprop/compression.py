"""Support reduction of discrete distributions by weighted k-means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .distributions import DiscreteDistribution, GaussianMixture, normalize_weights
from .quantization import QuantizationResult, Quantizer, penalty_about
from .transport import wasserstein_discrete

MAX_LLOYD_ITERS = 200
LLOYD_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class CompressionResult:
    compressed: DiscreteDistribution
    theta_compr: float
    assignment: np.ndarray  # source atom -> compressed atom
    iterations: int = 0


def _kmeans_pp(x, w, n_clusters, rng):
    centers = [x[rng.choice(len(x), p=w)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, n_clusters):
        score = w * d2
        total = score.sum()
        if total <= 0:
            break
        centers.append(x[rng.choice(len(x), p=score / total)])
        d2 = np.minimum(d2, np.sum((x - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def weighted_kmeans(x, w, n_clusters: int, seed: int = 0):
    """Lloyd iterations from a k-means++ start, weights counting as multiplicities.

    Returns ``(centers, labels, iterations)``.  Empty clusters are re-seeded at the atom
    with the largest weighted squared distance to its center.
    """
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, w, n_clusters, rng)
    prev = np.inf
    iterations = 0
    for iterations in range(1, MAX_LLOYD_ITERS + 1):
        d2 = cdist(x, centers, "sqeuclidean")
        labels = np.argmin(d2, axis=1)
        obj = float(w @ d2[np.arange(len(x)), labels])
        mass = np.bincount(labels, weights=w, minlength=len(centers))
        empty = np.flatnonzero(mass <= 0)
        if empty.size:
            far = w * d2[np.arange(len(x)), labels]
            for k in empty:
                i = int(np.argmax(far))
                centers[k] = x[i]
                labels[i] = k
                far[i] = 0.0
            mass = np.bincount(labels, weights=w, minlength=len(centers))
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, w[:, None] * x)
        keep = mass > 0
        centers[keep] = sums[keep] / mass[keep, None]
        if np.isfinite(prev) and prev - obj <= LLOYD_RTOL * max(prev, np.finfo(float).tiny):
            break
        prev = obj
    labels = np.argmin(cdist(x, centers, "sqeuclidean"), axis=1)
    return centers, labels, iterations


def compress(d: DiscreteDistribution, n_atoms: int, rho: int = 2, seed: int = 0) -> CompressionResult:
    """Reduce ``d`` to at most ``n_atoms`` atoms and measure the exact cost.

    ``theta_compr`` is the optimal-transport distance between ``d`` and the
    result, solved to optimality starting from the k-means assignment.
    """
    if n_atoms < 1:
        raise ValueError("compression budget must be >= 1")
    if len(d) <= n_atoms:
        return CompressionResult(d, 0.0, np.arange(len(d)))
    centers, weights, labels, iterations = _cluster(d, n_atoms, seed)
    compressed = DiscreteDistribution(centers, weights)
    plan = np.zeros((len(d), len(centers)))
    plan[np.arange(len(d)), labels] = d.weights
    theta, _ = wasserstein_discrete(d, compressed, rho, init_plan=plan)
    return CompressionResult(compressed, theta, labels, iterations)


def _cluster(d: DiscreteDistribution, n_atoms: int, seed: int):
    centers, labels, iterations = weighted_kmeans(d.locations, d.weights, n_atoms, seed)
    mass = np.bincount(labels, weights=d.weights, minlength=len(centers))
    used = np.flatnonzero(mass > 0)
    remap = np.full(len(centers), -1)
    remap[used] = np.arange(used.size)
    return centers[used], normalize_weights(mass[used]), remap[labels], iterations


def merge_cells(gmm: GaussianMixture, q: Quantizer, qr: QuantizationResult, n_atoms: int,
                seed: int = 0) -> tuple[DiscreteDistribution, float]:
    """Coarsen a quantization to at most ``n_atoms`` locations before any dynamics.

    Cells are grouped by weighted k-means on their locations and every group
    is sent to its mass-weighted mean.  Returns the coarse distribution and
    its exact quantization penalty with respect to ``gmm``, which replaces
    ``qr.theta_delta`` (no separate compression error is incurred).
    """
    if n_atoms < 1:
        raise ValueError("compression budget must be >= 1")
    if len(qr.discrete) <= n_atoms:
        return qr.discrete, qr.theta_delta
    centers, weights, labels, _ = _cluster(qr.discrete, n_atoms, seed)
    targets = centers[labels[qr.cell_atom]]
    return DiscreteDistribution(centers, weights), penalty_about(gmm, q, targets)
