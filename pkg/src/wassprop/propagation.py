"""Propagation of Wasserstein ambiguity balls through noisy dynamics.

Each step quantizes the current center, pushes the atoms through the
dynamics, compresses the result, and convolves it with the noise center.
The radius update accumulates every approximation so that the true state
distribution stays inside the ball.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .compression import compress, merge_cells
from .distributions import AmbiguityBall, GaussianMixture, convolve
from .dynamics import DynamicsModel, norm_linearization, pushforward
from .quantization import build_grid, quantize

ACCOUNTING_VARIANTS = ("post", "paper")
COMPRESSION_SIDES = ("output", "input", "auto")


@dataclass(frozen=True)
class PropagationConfig:
    """Algorithm settings.

    ``compression_side`` chooses where the support is reduced to
    ``n_compress`` atoms: ``"output"`` compresses the pushed-forward atoms and
    pays the exact transport cost; ``"input"`` merges quantizer cells before
    the dynamics, which folds the reduction into an exact quantization
    penalty; ``"auto"`` evaluates both each step and keeps the smaller radius.

    ``compression_accounting`` selects where the compression error enters
    the radius: ``"post"`` adds it after the dynamics bound (sound because
    compression happens after the pushforward); ``"paper"`` adds it to the
    incoming radius before the bound is applied.
    """

    rho: int = 2
    budget: int = 100
    coverage: float = 4.0
    n_compress: int = 10
    seed: int = 0
    compression_accounting: str = "post"
    mass_floor: float = 1e-12
    use_guards: bool = True
    tune_split: bool = True
    compression_side: str = "output"

    def __post_init__(self):
        if self.rho not in (1, 2):
            raise ValueError("rho must be 1 or 2")
        if self.budget < 1:
            raise ValueError("quantizer budget must be >= 1")
        if self.n_compress < 1:
            raise ValueError("compression budget must be >= 1")
        if not self.coverage > 0:
            raise ValueError("coverage must be positive")
        if self.compression_side not in COMPRESSION_SIDES:
            raise ValueError(f"compression_side must be one of {COMPRESSION_SIDES}")
        if self.compression_accounting not in ACCOUNTING_VARIANTS:
            raise ValueError(f"compression_accounting must be one of {ACCOUNTING_VARIANTS}")


@dataclass(frozen=True)
class StepReport:
    k: int
    theta_x: float
    theta_delta: float
    theta_compr: float
    alpha_hat: float
    beta_term: float
    support_size: int
    wall_time: float
    lipschitz: float = 0.0
    split: float | None = None
    n_locations: int = 0


@dataclass
class Trace:
    initial: AmbiguityBall
    noise: AmbiguityBall
    steps: list[tuple[AmbiguityBall, StepReport]] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def balls(self) -> list[AmbiguityBall]:
        return [self.initial] + [b for b, _ in self.steps]

    @property
    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls])

    @property
    def reports(self) -> list[StepReport]:
        return [r for _, r in self.steps]

    def to_dict(self) -> dict:
        return {
            "initial": self.initial.to_dict(),
            "noise": self.noise.to_dict(),
            "steps": [{"ball": b.to_dict(), "report": asdict(r)} for b, r in self.steps],
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trace":
        steps = [(AmbiguityBall.from_dict(s["ball"]), StepReport(**s["report"])) for s in d["steps"]]
        return cls(AmbiguityBall.from_dict(d["initial"]), AmbiguityBall.from_dict(d["noise"]),
                   steps, d.get("config", {}))

    def to_json(self) -> str:
        # json writes floats with repr, the shortest string that round-trips
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Trace":
        return cls.from_dict(json.loads(s))


def radius_update(theta_k, theta_delta, theta_compr, theta_omega, alpha_hat, beta_term, rho=2) -> float:
    """``theta_omega + (alpha_hat (theta_k + theta_delta)^rho + beta_term)^(1/rho) + theta_compr``."""
    args = dict(theta_k=theta_k, theta_delta=theta_delta, theta_compr=theta_compr,
                theta_omega=theta_omega, alpha_hat=alpha_hat, beta_term=beta_term)
    for name, v in args.items():
        if not v >= 0:
            raise ValueError(f"{name} must be nonnegative (got {v!r})")
    if not rho >= 1:
        raise ValueError("rho must be >= 1")
    core = (alpha_hat * (theta_k + theta_delta) ** rho + beta_term) ** (1.0 / rho)
    return float(theta_omega + core + theta_compr)


def fixed_point_bound(theta_omega, L, epsilon, rho=2) -> float:
    """Limit of ``theta -> theta_omega + L (theta + epsilon)`` for a contraction ``L < 1``."""
    if not L >= 0:
        raise ValueError("Lipschitz bound must be nonnegative")
    if L >= 1:
        raise ValueError(f"not contractive: Lipschitz bound {L} >= 1")
    if theta_omega < 0 or epsilon < 0:
        raise ValueError("theta_omega and epsilon must be nonnegative")
    if rho < 1:
        raise ValueError("rho must be >= 1")
    return float(theta_omega / (1 - L) + L * epsilon / (1 - L))


def _step_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def _certify(ball, noise, model, cfg, atoms, theta_delta, seed):
    scale = (ball.radius + theta_delta) ** cfg.rho if cfg.tune_split else None
    lin = norm_linearization(model, atoms.locations, cfg.rho, scale=scale,
                             masses=atoms.weights, use_guards=cfg.use_guards)
    beta_term = lin.beta_term(atoms.weights)
    comp = compress(pushforward(model, atoms), cfg.n_compress, cfg.rho, seed)
    if cfg.compression_accounting == "post":
        theta = radius_update(ball.radius, theta_delta, comp.theta_compr, noise.radius,
                              lin.alpha_hat, beta_term, cfg.rho)
    else:
        theta = radius_update(ball.radius + comp.theta_compr, theta_delta, 0.0, noise.radius,
                              lin.alpha_hat, beta_term, cfg.rho)
    return theta, theta_delta, lin, beta_term, comp, len(atoms)


def propagate_step(ball: AmbiguityBall, noise: AmbiguityBall, model: DynamicsModel,
                   cfg: PropagationConfig, k: int = 0) -> tuple[AmbiguityBall, StepReport]:
    if ball.order != noise.order or ball.order != cfg.rho:
        raise ValueError("ball, noise and config must share one Wasserstein order")
    start = time.perf_counter()
    seed = _step_seed(cfg.seed, k)
    center = ball.center
    q = build_grid(center, cfg.budget, cfg.coverage)
    qr = quantize(center, q, cfg.mass_floor, cfg.rho)
    candidates = []
    if cfg.compression_side in ("output", "auto"):
        candidates.append(_certify(ball, noise, model, cfg, qr.discrete, qr.theta_delta, seed))
    if cfg.compression_side in ("input", "auto"):
        coarse, theta_merged = merge_cells(center, q, qr, cfg.n_compress, seed)
        candidates.append(_certify(ball, noise, model, cfg, coarse, theta_merged, seed))
    theta, theta_delta, lin, beta_term, comp, n_locations = min(candidates, key=lambda c: c[0])
    if not np.isfinite(theta):
        raise FloatingPointError(f"radius became non-finite at step {k}")
    new_center = convolve(comp.compressed, noise.center)
    report = StepReport(
        k=k, theta_x=theta, theta_delta=theta_delta, theta_compr=comp.theta_compr,
        alpha_hat=lin.alpha_hat, beta_term=beta_term, support_size=new_center.n_components,
        wall_time=time.perf_counter() - start, lipschitz=lin.lipschitz, split=lin.split,
        n_locations=n_locations,
    )
    return AmbiguityBall(new_center, theta, cfg.rho), report


def propagate(initial: AmbiguityBall, noise: AmbiguityBall, model: DynamicsModel, K: int,
              cfg: PropagationConfig | None = None) -> Trace:
    """Fold ``propagate_step`` ``K`` times; the trace holds ``K + 1`` balls."""
    cfg = cfg or PropagationConfig()
    if int(K) != K or K < 1:
        raise ValueError("horizon K must be an integer >= 1")
    trace = Trace(initial, noise, [], {**asdict(cfg), "horizon": int(K), "family": model.family})
    ball = initial
    for k in range(int(K)):
        ball, report = propagate_step(ball, noise, model, cfg, k)
        trace.steps.append((ball, report))
    return trace


def single_gaussian_ball(mean, covariance, radius, rho=2) -> AmbiguityBall:
    return AmbiguityBall(GaussianMixture.gaussian(mean, covariance), radius, rho)
