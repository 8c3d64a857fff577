"""Eigenbasis-aligned rectangular quantization of shared-covariance mixtures.

In the eigenbasis of the shared covariance every mixture component factorises
into independent 1-D Gaussians, so the mass of an axis-aligned box and the
second moment of ``x - c`` over it are sums over components of products of
1-D truncated Gaussian integrals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .distributions import DiscreteDistribution, GaussianMixture, normalize_weights

_SQRT_2PI = np.sqrt(2.0 * np.pi)
DEFAULT_MASS_FLOOR = 1e-12


def _pdf(z):
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(-0.5 * z * z) / _SQRT_2PI
    return np.where(np.isfinite(z), out, 0.0)


def _zpdf(z):
    """``z * phi(z)``, zero at +-inf."""
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore"):
        out = z * _pdf(z)
    return np.where(np.isfinite(z), out, 0.0)


def _cdf_diff(alpha, beta):
    """``Phi(beta) - Phi(alpha)`` evaluated on the tail side that keeps precision."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    upper = ndtr(-alpha) - ndtr(-beta)
    lower = ndtr(beta) - ndtr(alpha)
    return np.clip(np.where(alpha > 0, upper, lower), 0.0, 1.0)


def _standardise(mean, sd, a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = (a - mean) / sd
        beta = (b - mean) / sd
    return alpha, beta


def _interval_mass(mean, sd, a, b):
    mean, sd, a, b = np.broadcast_arrays(*(np.asarray(v, float) for v in (mean, sd, a, b)))
    alpha, beta = _standardise(mean, sd, a, b)
    point = ((mean > a) & (mean <= b)).astype(float)
    return np.where(sd > 0, _cdf_diff(alpha, beta), point)


def _interval_first_moment(mean, sd, a, b):
    """``int_a^b x N(x; mean, sd^2) dx``."""
    mean, sd, a, b = np.broadcast_arrays(*(np.asarray(v, float) for v in (mean, sd, a, b)))
    alpha, beta = _standardise(mean, sd, a, b)
    mass = _interval_mass(mean, sd, a, b)
    smooth = mean * mass + sd * (_pdf(alpha) - _pdf(beta))
    return np.where(sd > 0, smooth, mean * mass)


def _tsm(mean, sd, a, b, center):
    mean, sd, a, b, center = np.broadcast_arrays(
        *(np.asarray(v, float) for v in (mean, sd, a, b, center)))
    alpha, beta = _standardise(mean, sd, a, b)
    shift = mean - center
    var = sd * sd
    mass = _interval_mass(mean, sd, a, b)
    smooth = ((var + shift**2) * mass
              - var * (_zpdf(beta) - _zpdf(alpha))
              - 2.0 * shift * sd * (_pdf(beta) - _pdf(alpha)))
    return np.clip(np.where(sd > 0, smooth, shift**2 * mass), 0.0, None)


def truncated_second_moment(mean, variance, a, b, center):
    """``int_a^b (x - center)^2 N(x; mean, variance) dx`` in closed form.

    ``a``/``b`` may be ``-inf``/``+inf``.  A zero variance is treated as a
    point mass at ``mean`` (included when ``a < mean <= b``).
    """
    a_arr, b_arr = np.asarray(a, float), np.asarray(b, float)
    if np.any(a_arr >= b_arr):
        raise ValueError("interval requires a < b")
    if np.any(np.asarray(variance, float) < 0):
        raise ValueError("variance must be nonnegative")
    out = _tsm(mean, np.sqrt(variance), a, b, center)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Quantizer:
    """Rectangular partition in rotated coordinates ``z = rotation.T @ x``.

    Cells are half-open ``(lo, hi]`` boxes; the outermost cells on each axis
    extend to infinity.  Flat cell ids follow C order over the per-axis
    interval indices.
    """

    rotation: np.ndarray
    breakpoints: tuple[np.ndarray, ...]
    locations: np.ndarray

    def __post_init__(self):
        for bp in self.breakpoints:
            if np.any(np.diff(bp) <= 0):
                raise ValueError("breakpoints must be strictly increasing")
        if self.locations.shape[0] != self.n_cells:
            raise ValueError("one location per cell is required")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(bp) + 1 for bp in self.breakpoints)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    def cell_index(self, flat) -> tuple[np.ndarray, ...]:
        return np.unravel_index(flat, self.shape)

    def flat_index(self, multi) -> np.ndarray:
        return np.ravel_multi_index(multi, self.shape)

    def axis_edges(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        bp = self.breakpoints[axis]
        lo = np.concatenate([[-np.inf], bp])
        hi = np.concatenate([bp, [np.inf]])
        return lo, hi

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell lower/upper bounds in rotated coordinates, shape ``(n_cells, dim)``."""
        multi = self.cell_index(np.arange(self.n_cells))
        lo = np.empty((self.n_cells, self.dim))
        hi = np.empty((self.n_cells, self.dim))
        for a in range(self.dim):
            elo, ehi = self.axis_edges(a)
            lo[:, a] = elo[multi[a]]
            hi[:, a] = ehi[multi[a]]
        return lo, hi

    def assign(self, points) -> np.ndarray:
        """Flat cell id for each point (ties on a breakpoint go to the lower cell)."""
        z = np.atleast_2d(points) @ self.rotation
        multi = tuple(np.searchsorted(self.breakpoints[a], z[:, a], side="left")
                      for a in range(self.dim))
        return self.flat_index(multi)

    def apply(self, points) -> np.ndarray:
        """The quantization operator: each point replaced by its cell's location."""
        return self.locations[self.assign(points)]

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "breakpoints": [bp.tolist() for bp in self.breakpoints],
            "locations": self.locations.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d: dict) -> "Quantizer":
        return cls(np.asarray(d["rotation"], float),
                   tuple(np.asarray(bp, float) for bp in d["breakpoints"]),
                   np.asarray(d["locations"], float))


@dataclass(frozen=True, eq=False)
class QuantizationResult:
    discrete: DiscreteDistribution
    theta_delta: float
    cell_ids: np.ndarray          # flat ids of the kept cells, aligned with discrete
    cell_mass: np.ndarray         # mass of every cell of the quantizer
    cell_penalty: np.ndarray      # per-cell contribution to theta_delta**2
    cell_atom: np.ndarray         # index into discrete that each cell is mapped to

    def to_csv(self, path, q: Quantizer) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell"] + [f"loc{a}" for a in range(q.dim)]
                            + ["mass", "penalty"])
            for k in range(q.n_cells):
                writer.writerow([k] + [repr(float(v)) for v in q.locations[k]]
                                + [repr(float(self.cell_mass[k])),
                                   repr(float(self.cell_penalty[k]))])


def _rotated_params(gmm: GaussianMixture, rotation: np.ndarray):
    """Component means and per-axis standard deviations in rotated coordinates."""
    rot_cov = rotation.T @ gmm.covariance @ rotation
    scale = max(1.0, float(np.max(np.abs(rot_cov))))
    off = rot_cov - np.diag(np.diag(rot_cov))
    if np.max(np.abs(off)) > 1e-9 * scale:
        raise ValueError("quantizer rotation does not diagonalise the mixture covariance")
    sd = np.sqrt(np.clip(np.diag(rot_cov), 0.0, None))
    return gmm.means @ rotation, sd


def _allocate(spread: np.ndarray, active: np.ndarray, budget: int) -> np.ndarray:
    counts = np.ones(len(spread), dtype=int)
    idx = np.flatnonzero(active)
    if idx.size == 0 or budget == 1:
        return counts
    s = spread[idx]
    kappa = (budget / np.prod(s)) ** (1.0 / idx.size)
    counts[idx] = np.maximum(1, np.floor(kappa * s).astype(int))
    # tiny spreads on some axes can push the floored counts past the budget
    while np.prod(counts) > budget:
        shrinkable = idx[counts[idx] > 1]
        worst = shrinkable[np.argmin(spread[shrinkable] / counts[shrinkable])]
        counts[worst] -= 1
    # greedily refine the axis with the widest cells while the budget allows
    while True:
        width = spread[idx] / counts[idx]
        grown = False
        for k in np.argsort(-width, kind="stable"):
            a = idx[k]
            if np.prod(counts) // counts[a] * (counts[a] + 1) <= budget:
                counts[a] += 1
                grown = True
                break
        if not grown:
            return counts


def _cell_tables(mz: np.ndarray, sd: np.ndarray, q: Quantizer):
    """Per-cell, per-component axis masses ``P[a]`` of shape ``(n_cells, M)``."""
    lo, hi = q.cell_bounds()
    masses = [_interval_mass(mz[None, :, a], sd[a], lo[:, a, None], hi[:, a, None])
              for a in range(q.dim)]
    return lo, hi, masses


def _centroids(gmm_w, mz, sd, q_shape_only: Quantizer, fallback_lo, fallback_hi):
    lo, hi, P = _cell_tables(mz, sd, q_shape_only)
    dim = len(P)
    joint = np.prod(np.stack(P), axis=0)                   # (cells, M)
    mass = joint @ gmm_w
    cent = np.empty((lo.shape[0], dim))
    for a in range(dim):
        first = _interval_first_moment(mz[None, :, a], sd[a], lo[:, a, None], hi[:, a, None])
        others = np.prod(np.stack([P[b] for b in range(dim) if b != a]), axis=0) if dim > 1 else 1.0
        num = (first * others) @ gmm_w
        mid = 0.5 * (np.maximum(lo[:, a], fallback_lo[a]) + np.minimum(hi[:, a], fallback_hi[a]))
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(mass > 1e-300, num / mass, mid)
        cent[:, a] = np.clip(np.where(np.isfinite(c), c, mid), lo[:, a], hi[:, a])
    return cent


def build_grid(gmm: GaussianMixture, budget: int, coverage: float = 4.0,
               locations: str = "centroid") -> Quantizer:
    """Uniform grid in the covariance eigenbasis with about ``budget`` cells.

    Per axis the grid spans ``[lo - coverage*sd, hi + coverage*sd]`` where
    ``lo``/``hi`` bound the rotated component means; the outermost cells are
    unbounded.  Cell counts are proportional to the axis spans (product at
    most ``budget``), zero-variance axes get one cell.  With
    ``locations="centroid"`` each cell's location is its conditional mean
    under ``gmm``; ``"midpoint"`` uses the center of the cell clipped to the
    grid span instead.
    """
    if budget < 1:
        raise ValueError("quantization budget must be >= 1")
    if coverage <= 0:
        raise ValueError("coverage must be positive")
    if locations not in ("centroid", "midpoint"):
        raise ValueError("locations must be 'centroid' or 'midpoint'")
    rotation = np.array(gmm.eigvecs)
    mz = gmm.means @ rotation
    sd = np.sqrt(gmm.eigvals)
    lo_m, hi_m = mz.min(axis=0), mz.max(axis=0)
    span_lo = lo_m - coverage * sd
    span_hi = hi_m + coverage * sd
    spread = span_hi - span_lo
    active = sd > 1e-12 * max(1e-300, float(sd.max()))
    counts = _allocate(spread, active, int(budget))
    edges = [np.linspace(span_lo[a], span_hi[a], counts[a] + 1) for a in range(gmm.dim)]
    breakpoints = tuple(e[1:-1] for e in edges)
    if locations == "centroid":
        return grid_from_breakpoints(gmm, breakpoints, rotation)
    mids = np.meshgrid(*(0.5 * (e[1:] + e[:-1]) for e in edges), indexing="ij")
    centers_z = np.stack([m.ravel() for m in mids], axis=1)
    return Quantizer(rotation, breakpoints, centers_z @ rotation.T)


def grid_from_breakpoints(gmm: GaussianMixture, breakpoints, rotation=None) -> Quantizer:
    """Quantizer with the given per-axis breakpoints and conditional-mean locations.

    ``rotation`` defaults to the covariance eigenbasis of ``gmm``.
    """
    rotation = np.array(gmm.eigvecs) if rotation is None else np.asarray(rotation, float)
    breakpoints = tuple(np.asarray(bp, float).reshape(-1) for bp in breakpoints)
    if len(breakpoints) != gmm.dim:
        raise ValueError("one breakpoint array per axis is required")
    mz, sd = _rotated_params(gmm, rotation)
    # empty cells fall back to the midpoint of their range clipped to this box
    reach = np.maximum(sd, 1.0)
    fb_lo = np.array([min(mz[:, a].min(), *bp) if bp.size else mz[:, a].min()
                      for a, bp in enumerate(breakpoints)]) - reach
    fb_hi = np.array([max(mz[:, a].max(), *bp) if bp.size else mz[:, a].max()
                      for a, bp in enumerate(breakpoints)]) + reach
    n_cells = int(np.prod([bp.size + 1 for bp in breakpoints]))
    shell = Quantizer(rotation, breakpoints, np.zeros((n_cells, gmm.dim)))
    cent = _centroids(gmm.weights, mz, sd, shell, fb_lo, fb_hi)
    return Quantizer(rotation, breakpoints, cent @ rotation.T)


def _cell_penalties(w, mz, sd, lo, hi, P, centers_z):
    """``sum_i w_i int_cell ||z - center||^2 dN_i`` for each cell."""
    dim = len(P)
    total = np.zeros(lo.shape[0])
    for a in range(dim):
        t = _tsm(mz[None, :, a], sd[a], lo[:, a, None], hi[:, a, None], centers_z[:, a, None])
        others = np.prod(np.stack([P[b] for b in range(dim) if b != a]), axis=0) if dim > 1 else 1.0
        total += (t * others) @ w
    return total


def quantize(gmm: GaussianMixture, q: Quantizer, mass_floor: float = DEFAULT_MASS_FLOOR,
             rho: int = 2) -> QuantizationResult:
    """Push ``gmm`` through the quantizer and compute the quantization penalty.

    Cells lighter than ``mass_floor`` are merged into the nearest kept
    location; their penalty is then integrated about that location, so the
    returned ``theta_delta`` is exact for the map actually applied.  For
    ``rho == 1`` the rho=2 penalty is returned, which upper-bounds it.
    """
    if rho not in (1, 2):
        raise ValueError("quantization penalty is implemented for rho in {1, 2}")
    mz, sd = _rotated_params(gmm, q.rotation)
    lo, hi, P = _cell_tables(mz, sd, q)
    w = gmm.weights
    mass = np.prod(np.stack(P), axis=0) @ w
    loc_z = q.locations @ q.rotation
    penalty = _cell_penalties(w, mz, sd, lo, hi, P, loc_z)

    keep = mass >= mass_floor
    if not np.any(keep):
        keep = mass == mass.max()
    kept_ids = np.flatnonzero(keep)
    weights = mass[kept_ids].copy()
    dropped = np.flatnonzero(~keep)
    cell_atom = np.full(q.n_cells, -1)
    cell_atom[kept_ids] = np.arange(kept_ids.size)
    if dropped.size:
        d2 = ((loc_z[dropped, None, :] - loc_z[None, kept_ids, :]) ** 2).sum(-1)
        target = np.argmin(d2, axis=1)
        cell_atom[dropped] = target
        np.add.at(weights, target, mass[dropped])
        sub_P = [p[dropped] for p in P]
        penalty = penalty.copy()
        penalty[dropped] = _cell_penalties(w, mz, sd, lo[dropped], hi[dropped], sub_P,
                                           loc_z[kept_ids[target]])
    theta = float(np.sqrt(max(float(np.sum(penalty)), 0.0)))
    discrete = DiscreteDistribution(q.locations[kept_ids], normalize_weights(weights))
    return QuantizationResult(discrete, theta, kept_ids, mass, penalty, cell_atom)


def penalty_about(gmm: GaussianMixture, q: Quantizer, targets) -> float:
    """Exact ``(sum_cells int_cell ||x - target_cell||^2 dgmm)^(1/2)``.

    ``targets`` gives one point per cell, so any map that is constant on
    cells (for example a merge of several cells) can be scored.
    """
    targets = np.asarray(targets, dtype=float).reshape(q.n_cells, q.dim)
    mz, sd = _rotated_params(gmm, q.rotation)
    lo, hi, P = _cell_tables(mz, sd, q)
    penalty = _cell_penalties(gmm.weights, mz, sd, lo, hi, P, targets @ q.rotation)
    return float(np.sqrt(max(float(np.sum(penalty)), 0.0)))
