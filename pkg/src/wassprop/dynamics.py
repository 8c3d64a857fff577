"""Dynamics models ``f`` and their norm linearizations.

A norm linearization at locations ``c_l`` is a set of pairs
``(alpha_l, beta_l)`` with

    ||f(x) - f(c_l)||^rho <= alpha_l ||x - c_l||^rho + beta_l    for every x,

which is what the radius update consumes.  Every family below produces
pairs that are sound by construction.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distributions import DiscreteDistribution

SIGMOID_MAX_SLOPE = 0.25


def spectral_norm(A) -> float:
    """Largest singular value (LAPACK SVD, accurate to rounding)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(np.linalg.norm(A, 2))


def _points(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError("dynamics input must be finite")
    return arr, single


class DynamicsModel:
    """Base class; subclasses implement ``_eval`` on a batch of row vectors."""

    family = "custom"
    dim: int

    def __call__(self, x) -> np.ndarray:
        pts, single = _points(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {pts.shape[1]}")
        out = self._eval(pts)
        return out[0] if single else out

    def _eval(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def lipschitz(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class NormLinearization:
    alpha: np.ndarray
    beta: np.ndarray
    lipschitz: float
    split: float | None = None  # Young split parameter t, piecewise models only

    @property
    def alpha_hat(self) -> float:
        return float(np.max(self.alpha))

    def beta_term(self, masses) -> float:
        return float(np.dot(masses, self.beta))


class LinearModel(DynamicsModel):
    family = "custom-linear"

    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError("linear model matrix must be square")
        self.dim = self.A.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float)

    def _eval(self, x):
        return x @ self.A.T + self.b

    def lipschitz(self) -> float:
        return spectral_norm(self.A)

    def to_dict(self) -> dict:
        return {"family": self.family, "A": self.A.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True, eq=False)
class Mode:
    """Affine mode ``x -> A x + b`` active where ``G x <= h`` (all rows)."""

    A: np.ndarray
    G: np.ndarray
    h: np.ndarray
    b: np.ndarray = field(default=None)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("mode matrix must be square")
        G = np.asarray(self.G, dtype=float).reshape(-1, n)
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if G.shape[0] != h.shape[0]:
            raise ValueError("each guard needs one offset")
        b = np.zeros(n) if self.b is None else np.asarray(self.b, dtype=float).reshape(n)
        for k, v in (("A", A), ("G", G), ("h", h), ("b", b)):
            object.__setattr__(self, k, v)

    def holds(self, x: np.ndarray) -> np.ndarray:
        if self.G.shape[0] == 0:
            return np.ones(x.shape[0], dtype=bool)
        return np.all(x @ self.G.T <= self.h, axis=1)


class PiecewiseLinearModel(DynamicsModel):
    """Switched affine map; the first mode whose guard holds is applied."""

    family = "piecewise-linear"

    def __init__(self, modes: list[Mode]):
        if not modes:
            raise ValueError("piecewise model needs at least one mode")
        self.modes = list(modes)
        self.dim = self.modes[0].A.shape[0]
        if any(m.A.shape != (self.dim, self.dim) for m in self.modes):
            raise ValueError("all mode matrices must share one dimension")

    def mode_of(self, x) -> np.ndarray:
        pts, _ = _points(x)
        idx = np.full(pts.shape[0], -1)
        for k, mode in enumerate(self.modes):
            hit = (idx < 0) & mode.holds(pts)
            idx[hit] = k
        if np.any(idx < 0):
            raise ValueError("point not covered by any mode guard")
        return idx

    def _eval(self, x):
        idx = self.mode_of(x)
        out = np.empty_like(x)
        for k, mode in enumerate(self.modes):
            sel = idx == k
            if np.any(sel):
                out[sel] = x[sel] @ mode.A.T + mode.b
        return out

    def lipschitz(self) -> float:
        """Largest mode gain; a Lipschitz constant only within each mode."""
        return max(spectral_norm(m.A) for m in self.modes)

    def check_cover(self, lo, hi, n: int = 41) -> bool:
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.dim)
        try:
            self.mode_of(grid)
        except ValueError:
            return False
        return True

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "modes": [
                {"A": m.A.tolist(), "b": m.b.tolist(),
                 "guards": [{"g": g.tolist(), "h": float(h)} for g, h in zip(m.G, m.h)]}
                for m in self.modes
            ],
        }


def rotation(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def double_spiral(scale: float = 0.8, angle: float = np.pi / 8) -> PiecewiseLinearModel:
    """``scale * R(+angle)`` for ``x_1 <= 0`` and ``scale * R(-angle)`` elsewhere."""
    return PiecewiseLinearModel([
        Mode(scale * rotation(angle), [[1.0, 0.0]], [0.0]),
        Mode(scale * rotation(-angle), [[-1.0, 0.0]], [0.0]),
    ])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class NeuralNetModel(DynamicsModel):
    """MLP with sigmoid hidden layers and an affine output layer.

    If ``domain`` (a box ``(lo, hi)``) is given, inputs are clipped into it
    before the forward pass and Lipschitz bounds are computed over the box.
    """

    family = "neural-net"

    def __init__(self, weights, biases, domain=None):
        self.weights = [np.atleast_2d(np.asarray(W, dtype=float)) for W in weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != b.shape[0]:
                raise ValueError("bias length must match layer output size")
        for W1, W2 in zip(self.weights, self.weights[1:]):
            if W2.shape[1] != W1.shape[0]:
                raise ValueError("layer shapes do not chain")
        self.dim = self.weights[0].shape[1]
        if self.weights[-1].shape[0] != self.dim:
            raise ValueError("network must map R^n to R^n")
        self.domain = None if domain is None else (np.asarray(domain[0], float),
                                                   np.asarray(domain[1], float))

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def _eval(self, x):
        if self.domain is not None:
            x = np.clip(x, *self.domain)
        h = x
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = _sigmoid(h @ W.T + b)
        return h @ self.weights[-1].T + self.biases[-1]

    def product_bound(self) -> float:
        norms = np.prod([spectral_norm(W) for W in self.weights])
        return float(norms * SIGMOID_MAX_SLOPE ** self.n_hidden)

    def jacobian_bound(self, lo, hi) -> float:
        """Interval bound on ``sup ||J(x)||_2`` over the box ``[lo, hi]``.

        Pre-activation intervals are propagated layer by layer; each sigmoid
        slope is bounded by its maximum over the interval, giving an
        elementwise bound ``M >= |J|`` and hence ``||J||_2 <= ||M||_2``.
        """
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        M = np.eye(self.dim)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
            zc = W @ mid + b
            zr = np.abs(W) @ rad
            zlo, zhi = zc - zr, zc + zr
            nearest = np.clip(0.0, zlo, zhi)
            s = _sigmoid(nearest)
            slope = s * (1.0 - s)
            M = (slope[:, None] * np.abs(W)) @ M
            lo, hi = _sigmoid(zlo), _sigmoid(zhi)
        M = np.abs(self.weights[-1]) @ M
        return min(spectral_norm(M),
                   float(np.sqrt(np.abs(M).sum(0).max() * np.abs(M).sum(1).max())))

    def lipschitz(self) -> float:
        bound = self.product_bound()
        if self.domain is not None:
            bound = min(bound, self.jacobian_bound(*self.domain))
        return bound

    def to_dict(self) -> dict:
        d = {"family": self.family,
             "layers": [{"W": W.tolist(), "b": b.tolist()}
                        for W, b in zip(self.weights, self.biases)]}
        if self.domain is not None:
            d["domain"] = [self.domain[0].tolist(), self.domain[1].tolist()]
        return d

    @classmethod
    def from_file(cls, path, domain=None) -> "NeuralNetModel":
        with open(path) as fh:
            layers = json.load(fh)["layers"]
        return cls([l["W"] for l in layers], [l["b"] for l in layers], domain)


_TANK_DEFAULTS = {
    "tank_area": [28.0, 32.0, 28.0, 32.0],
    "outlet_area": [0.071, 0.057, 0.071, 0.057],
    "pump_gain": [3.33, 3.35],
    "valve_split": [0.7, 0.6],
    "pump_voltage": [3.0, 3.0],
    "gravity": 981.0,
    "step": 1.0,
    "h_min": 0.2,
    "h_max": 20.0,
}


class QuadrupleTankModel(DynamicsModel):
    """One explicit Euler step of the four-tank process, with levels clamped to a box.

    Tanks 1 and 2 are the lower tanks; tank 3 drains into 1 and tank 4 into
    2.  Pump 1 feeds tanks 1 and 4, pump 2 feeds tanks 2 and 3.
    """

    family = "quadruple-tank"
    dim = 4

    def __init__(self, **params):
        unknown = set(params) - set(_TANK_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown tank parameters: {sorted(unknown)}")
        p = {**_TANK_DEFAULTS, **params}
        self.params = p
        self.A = np.asarray(p["tank_area"], float)
        self.a = np.asarray(p["outlet_area"], float)
        self.k = np.asarray(p["pump_gain"], float)
        self.gamma = np.asarray(p["valve_split"], float)
        self.v = np.asarray(p["pump_voltage"], float)
        self.g = float(p["gravity"])
        self.dt = float(p["step"])
        self.h_min = float(p["h_min"])
        self.h_max = float(p["h_max"])
        positives = [self.A, self.a, self.k, self.gamma, self.v, [self.g, self.dt]]
        if any(np.any(np.asarray(v) <= 0) for v in positives):
            raise ValueError("tank parameters must be positive")
        if np.any(self.gamma >= 1):
            raise ValueError("valve splits must lie in (0, 1)")
        if self.h_min <= 0:
            raise ValueError("clamp box touches zero level: Jacobian is unbounded")
        if self.h_max <= self.h_min:
            raise ValueError("clamp box is empty")
        self._inflow = np.array([
            self.gamma[0] * self.k[0] * self.v[0] / self.A[0],
            self.gamma[1] * self.k[1] * self.v[1] / self.A[1],
            (1 - self.gamma[1]) * self.k[1] * self.v[1] / self.A[2],
            (1 - self.gamma[0]) * self.k[0] * self.v[0] / self.A[3],
        ])
        # outflow coefficients c_i with q_i = c_i sqrt(h_i) / A_i
        self._c = self.a * np.sqrt(2.0 * self.g)

    def _eval(self, x):
        h = np.clip(x, self.h_min, self.h_max)
        q = self._c * np.sqrt(h)
        dh = np.empty_like(h)
        dh[:, 0] = (-q[:, 0] + q[:, 2]) / self.A[0]
        dh[:, 1] = (-q[:, 1] + q[:, 3]) / self.A[1]
        dh[:, 2] = -q[:, 2] / self.A[2]
        dh[:, 3] = -q[:, 3] / self.A[3]
        return np.clip(h + self.dt * (dh + self._inflow), self.h_min, self.h_max)

    def jacobian(self, x) -> np.ndarray:
        """Jacobian of the unclamped Euler step at interior points."""
        h = np.atleast_2d(x)
        s = self._c / (2.0 * np.sqrt(h))            # d q_i / d h_i
        J = np.zeros((h.shape[0], 4, 4))
        J[:, 0, 0] = 1 - self.dt * s[:, 0] / self.A[0]
        J[:, 0, 2] = self.dt * s[:, 2] / self.A[0]
        J[:, 1, 1] = 1 - self.dt * s[:, 1] / self.A[1]
        J[:, 1, 3] = self.dt * s[:, 3] / self.A[1]
        J[:, 2, 2] = 1 - self.dt * s[:, 2] / self.A[2]
        J[:, 3, 3] = 1 - self.dt * s[:, 3] / self.A[3]
        return J

    def lipschitz(self, pieces: int = 16) -> float:
        """Interval bound on ``sup ||J||_2`` over the clamp box.

        The box is split into ``pieces`` slabs per axis; on each sub-box the
        entries of ``|J|`` are bounded at the slab endpoints (each entry is
        monotone in its one level), and the spectral norm of the entrywise
        bound is maximised over sub-boxes.
        """
        edges = np.geomspace(self.h_min, self.h_max, pieces + 1)
        lo, hi = edges[:-1], edges[1:]
        s_lo = self._c[:, None] / (2.0 * np.sqrt(hi))[None, :]   # slope at the top of each slab
        s_hi = self._c[:, None] / (2.0 * np.sqrt(lo))[None, :]
        diag = np.maximum(np.abs(1 - self.dt * s_lo / self.A[:, None]),
                          np.abs(1 - self.dt * s_hi / self.A[:, None]))   # (4, pieces)
        off13 = self.dt * s_hi[2] / self.A[0]
        off24 = self.dt * s_hi[3] / self.A[1]
        idx = np.stack(np.meshgrid(*[np.arange(pieces)] * 4, indexing="ij"), -1).reshape(-1, 4)
        M = np.zeros((idx.shape[0], 4, 4))
        for i in range(4):
            M[:, i, i] = diag[i, idx[:, i]]
        M[:, 0, 2] = off13[idx[:, 2]]
        M[:, 1, 3] = off24[idx[:, 3]]
        return float(np.max(np.linalg.norm(M, 2, axis=(1, 2))))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


def lipschitz_bound(model: DynamicsModel) -> float:
    return model.lipschitz()


def pushforward(model: DynamicsModel, d: DiscreteDistribution) -> DiscreteDistribution:
    return DiscreteDistribution(model(d.locations), d.weights)


def _cross_mode_bound(A_j, b_j, G, h, offsets, centers, alpha, use_guards):
    """Upper bound on ``sup_{G x <= h} ||A_j x + b_j - off||^2 - alpha ||x - c||^2``.

    ``offsets`` holds ``A_i c + b_i`` for each location ``c``.  Evaluates the
    Lagrangian dual at the clipped stationary multiplier of every active set;
    each value is a valid bound and the smallest one is returned.
    """
    n = A_j.shape[0]
    H = alpha * np.eye(n) - A_j.T @ A_j
    Hinv = np.linalg.inv(H)
    e = b_j[None, :] - offsets
    g = e @ A_j + alpha * centers
    r = np.sum(e * e, axis=1) - alpha * np.sum(centers * centers, axis=1)
    m = G.shape[0] if use_guards else 0
    best = np.full(centers.shape[0], np.inf)
    for size in range(m + 1):
        for S in itertools.combinations(range(m), size):
            lam = np.zeros((centers.shape[0], m))
            if S:
                GS = G[list(S)]
                K = GS @ Hinv @ GS.T
                rhs = g @ Hinv @ GS.T - h[list(S)][None, :]
                lam[:, list(S)] = np.clip(2.0 * rhs @ np.linalg.pinv(K).T, 0.0, None)
            gl = g - 0.5 * lam @ G if m else g
            val = np.einsum("ki,ij,kj->k", gl, Hinv, gl) + r
            if m:
                val = val + lam @ h
            best = np.minimum(best, val)
    return best


def _piecewise_beta(model: PiecewiseLinearModel, centers, alpha, use_guards):
    """Per-location beta for rho = 2 at a common alpha > max ||A_j||^2."""
    mode = model.mode_of(centers)
    beta = np.zeros(centers.shape[0])
    for i, mi in enumerate(model.modes):
        sel = mode == i
        if not np.any(sel):
            continue
        c = centers[sel]
        off = c @ mi.A.T + mi.b
        worst = np.zeros(c.shape[0])
        for j, mj in enumerate(model.modes):
            if j == i:
                continue
            worst = np.maximum(worst, _cross_mode_bound(mj.A, mj.b, mj.G, mj.h, off, c,
                                                        alpha, use_guards))
        beta[sel] = worst
    return beta


def _golden_min(fn, lo, hi, iters: int = 80):
    inv = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fn(d)
    return c if fc <= fd else d


def norm_linearization(model: DynamicsModel, locations, rho: int = 2, *,
                       scale: float | None = None, masses=None, split: float | None = None,
                       use_guards: bool = True) -> NormLinearization:
    """Sound ``(alpha_l, beta_l)`` pairs for each location.

    For piecewise-linear models with ``rho = 2`` the pairs are
    ``alpha = (1 + t) max_j ||A_j||^2`` and the exact worst excess of every
    other mode over its guard polyhedron (``use_guards=False`` drops the
    guard and gives the closed form ``(1 + 1/t) ||(A_j - A_i) c||^2`` for
    linear modes).  ``t`` is ``split`` if given; otherwise, when ``scale``
    (the expected ``||x - c||^rho``) and ``masses`` are supplied, it
    minimises ``alpha * scale + sum(masses * beta)`` by golden-section search
    over ``log t``; otherwise ``t = 1``.
    """
    if rho not in (1, 2):
        raise ValueError("norm linearization supports rho in {1, 2}")
    centers, _ = _points(locations)
    L = model.lipschitz()
    k = centers.shape[0]
    if not isinstance(model, PiecewiseLinearModel) or len(model.modes) == 1:
        if isinstance(model, PiecewiseLinearModel):
            L = spectral_norm(model.modes[0].A)
        return NormLinearization(np.full(k, L**rho), np.zeros(k), L)

    if rho == 1:
        mode = model.mode_of(centers)
        beta = np.zeros(k)
        for i, mi in enumerate(model.modes):
            sel = mode == i
            for j, mj in enumerate(model.modes):
                if j != i and np.any(sel):
                    jump = centers[sel] @ (mj.A - mi.A).T + (mj.b - mi.b)
                    beta[sel] = np.maximum(beta[sel], np.linalg.norm(jump, axis=1))
        return NormLinearization(np.full(k, L), beta, L)

    L2 = L * L
    if L2 == 0.0:
        L2 = np.finfo(float).tiny

    def pairs(t):
        alpha = (1.0 + t) * L2
        return alpha, _piecewise_beta(model, centers, alpha, use_guards)

    if split is None:
        if scale is not None and masses is not None:
            w = np.asarray(masses, float)

            def objective(u):
                alpha, beta = pairs(np.exp(u))
                return alpha * scale + float(w @ beta)

            split = float(np.exp(_golden_min(objective, np.log(1e-8), np.log(1e4))))
        else:
            split = 1.0
    if split <= 0:
        raise ValueError("split parameter must be positive")
    alpha, beta = pairs(split)
    return NormLinearization(np.full(k, alpha), np.clip(beta, 0.0, None), L, split)


def model_from_dict(d: dict, base_dir: Path | str | None = None) -> DynamicsModel:
    family = d.get("family")
    base = Path(base_dir) if base_dir is not None else Path(".")
    if family == "custom-linear":
        return LinearModel(d["A"], d.get("b"))
    if family == "piecewise-linear":
        modes = []
        for m in d["modes"]:
            guards = m.get("guards", [])
            n = len(m["A"])
            G = np.array([g["g"] for g in guards], dtype=float).reshape(-1, n)
            h = np.array([g["h"] for g in guards], dtype=float)
            modes.append(Mode(m["A"], G, h, m.get("b")))
        return PiecewiseLinearModel(modes)
    if family == "neural-net":
        domain = d.get("domain")
        if "weights_file" in d:
            path = Path(d["weights_file"])
            if not path.is_absolute():
                path = base / path
            return NeuralNetModel.from_file(path, domain)
        layers = d["layers"]
        return NeuralNetModel([l["W"] for l in layers], [l["b"] for l in layers], domain)
    if family == "quadruple-tank":
        return QuadrupleTankModel(**d.get("params", {}))
    raise ValueError(f"unknown dynamics family {family!r}")


def evaluate(model: DynamicsModel, x) -> np.ndarray:
    """``f(x)`` for one point or a batch of row vectors."""
    return model(x)
