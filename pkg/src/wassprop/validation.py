"""Monte Carlo checks that simulated state distributions stay inside the balls."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .distributions import DiscreteDistribution, GaussianMixture, sample
from .dynamics import DynamicsModel
from .propagation import Trace
from .transport import wasserstein_discrete

MAX_COST_ENTRIES = 4_000_000


@dataclass(frozen=True, eq=False)
class SampleCloud:
    points: np.ndarray  # (K + 1, n_samples, dim)
    seed: int

    @property
    def n_samples(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "sample"] + [f"x{a}" for a in range(self.points.shape[2])])
            for k, cloud in enumerate(self.points):
                for i, p in enumerate(cloud):
                    writer.writerow([k, i] + [repr(float(v)) for v in p])


def simulate_true(model: DynamicsModel, init: GaussianMixture, noise: GaussianMixture, K: int,
                  n_samples: int, seed: int) -> SampleCloud:
    """Sample trajectories of ``x_{k+1} = f(x_k) + w_k`` for ``k < K``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    x = sample(init, n_samples, rng)
    out = [x]
    for _ in range(K):
        x = model(x) + sample(noise, n_samples, rng)
        out.append(x)
    return SampleCloud(np.stack(out), seed)


def empirical_wasserstein(a, b, rho: int = 2, max_entries: int = MAX_COST_ENTRIES) -> float:
    """Wasserstein distance between uniform empirical measures on two point sets.

    Equal-size clouds are solved as an assignment problem (an optimal plan
    between uniform measures of equal size is a permutation).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("point clouds must be nonempty")
    if a.shape[0] * b.shape[0] > max_entries:
        raise ValueError(f"{a.shape[0]} x {b.shape[0]} cost matrix exceeds the cap of "
                         f"{max_entries} entries; subsample the clouds")
    if a.shape[0] == b.shape[0]:
        C = cdist(a, b, "sqeuclidean") if rho == 2 else cdist(a, b) ** rho
        rows, cols = linear_sum_assignment(C)
        return float(np.mean(C[rows, cols]) ** (1.0 / rho))
    dist, _ = wasserstein_discrete(DiscreteDistribution.uniform(a), DiscreteDistribution.uniform(b), rho)
    return dist


@dataclass(frozen=True)
class ContainmentRow:
    k: int
    theta_k: float
    empirical_w: float
    w_slack: float
    w_violation: bool
    mean_gap: float
    mean_tolerance: float
    mean_violation: bool


@dataclass(frozen=True)
class ContainmentReport:
    rows: list[ContainmentRow]
    n_samples: int
    n_distance: int
    seed: int

    @property
    def mean_violations(self) -> int:
        return sum(r.mean_violation for r in self.rows)

    @property
    def w_violations(self) -> int:
        return sum(r.w_violation for r in self.rows)

    def to_dict(self) -> dict:
        return {"n_samples": self.n_samples, "n_distance": self.n_distance, "seed": self.seed,
                "mean_violations": self.mean_violations, "w_violations": self.w_violations,
                "rows": [asdict(r) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def csv_text(self) -> str:
        fields = list(ContainmentRow.__dataclass_fields__)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(fields)
        for r in self.rows:
            writer.writerow([_fmt(getattr(r, f)) for f in fields])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return f"{v:.17g}"
    return v


def _check_member(member: GaussianMixture, center: GaussianMixture, radius: float, what: str):
    single = member.n_components == 1 and center.n_components == 1
    if single and np.allclose(member.covariance, center.covariance, rtol=0, atol=1e-15):
        gap = float(np.linalg.norm(member.mean() - center.mean()))
        if gap > radius * (1 + 1e-12):
            raise ValueError(f"{what} member lies {gap} from its center, outside radius {radius}")


def containment_report(trace: Trace, model: DynamicsModel, member_init: GaussianMixture,
                       member_noise: GaussianMixture, n_samples: int = 10_000, seed: int = 0,
                       n_distance: int | None = 2000) -> ContainmentReport:
    """Compare simulated trajectories against every ball in ``trace``.

    The hard check is on first moments: ``||mean_true - mean_center||`` may
    exceed ``theta_k`` only by three standard errors of the sample mean.  The
    empirical Wasserstein distance (on ``n_distance`` points per side) is a
    soft diagnostic with slack ``2 n^(-1/max(d, 2))`` times the cloud diameter.
    ``n_distance=None`` skips it.
    """
    _check_member(member_init, trace.initial.center, trace.initial.radius, "initial")
    _check_member(member_noise, trace.noise.center, trace.noise.radius, "noise")
    K = len(trace.steps)
    cloud = simulate_true(model, member_init, member_noise, K, n_samples, seed)
    dim = cloud.points.shape[2]
    rng = np.random.default_rng([seed, 1])
    rows = []
    for k, ball in enumerate(trace.balls):
        pts = cloud.points[k]
        center = ball.center
        gap = float(np.linalg.norm(pts.mean(axis=0) - center.mean()))
        stderr = float(np.sqrt(np.trace(np.atleast_2d(np.cov(pts.T))) / n_samples))
        tol = ball.radius + 3.0 * stderr
        if n_distance:
            m = min(n_distance, n_samples)
            a = pts[:m]
            b = sample(center, m, rng)
            w = empirical_wasserstein(a, b, ball.order)
            both = np.vstack([a, b])
            diameter = float(np.linalg.norm(both.max(axis=0) - both.min(axis=0)))
            slack = 2.0 * m ** (-1.0 / max(dim, 2)) * diameter
            w_bad = w > ball.radius + slack
        else:
            w, slack, w_bad = float("nan"), float("nan"), False
        rows.append(ContainmentRow(k, ball.radius, w, slack, bool(w_bad), gap, tol, gap > tol))
    return ContainmentReport(rows, n_samples, n_distance or 0, seed)
