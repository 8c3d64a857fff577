"""Command-line front end: ``run``, ``sweep``, ``validate`` and ``fixed-point``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 system not contractive.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .distributions import AmbiguityBall, GaussianMixture
from .dynamics import DynamicsModel, PiecewiseLinearModel, lipschitz_bound, model_from_dict
from .propagation import (ACCOUNTING_VARIANTS, COMPRESSION_SIDES, PropagationConfig, Trace,
                          fixed_point_bound, propagate)
from .validation import containment_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NOT_CONTRACTIVE = 0, 2, 3, 4
BENCHMARKS = ("double_spiral", "piecewise_linear", "nn_pendulum", "quadruple_tank")
SWEEP_AXES = ("budget", "n_compress", "theta_x0", "theta_omega", "coverage", "horizon")


class ConfigError(ValueError):
    pass


def benchmark_path(name: str) -> Path:
    if name not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")
    return Path(str(resources.files("wassprop") / "configs" / f"{name}.json"))


def _mixture(spec: dict, where: str) -> GaussianMixture:
    try:
        if "mean" in spec:
            means, weights = [spec["mean"]], [1.0]
        else:
            means, weights = spec["means"], spec.get("weights")
            if weights is None:
                weights = [1.0 / len(means)] * len(means)
        n = len(means[0])
        if "covariance" in spec:
            cov = spec["covariance"]
        elif "variances" in spec:
            cov = np.diag(np.broadcast_to(np.asarray(spec["variances"], float), (n,)))
        else:
            raise ConfigError(f"{where}: give 'covariance' or 'variances'")
        return GaussianMixture(weights, means, cov)
    except ConfigError:
        raise
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class ExperimentConfig:
    """One propagation experiment as read from a JSON file."""

    dynamics: dict
    initial: dict
    noise: dict
    name: str = "experiment"
    rho: int = 2
    horizon: int = 20
    budget: int = 100
    coverage: float = 4.0
    n_compress: int = 10
    seed: int = 0
    compression_accounting: str = "post"
    compression_side: str = "output"
    validation: dict = field(default_factory=dict)
    fixed_point: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        for key, what in (("initial", "initial ball"), ("noise", "noise ball")):
            spec = getattr(self, key)
            if not isinstance(spec, dict) or "radius" not in spec:
                raise ConfigError(f"{key}: missing 'radius'")
            r = spec["radius"]
            if not isinstance(r, (int, float)) or not np.isfinite(r) or r < 0:
                raise ConfigError(f"{what} radius must be nonnegative")
        if self.rho not in (1, 2):
            raise ConfigError("rho must be 1 or 2")
        for key in ("horizon", "budget", "n_compress"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{key} must be an integer >= 1")
        if not isinstance(self.coverage, (int, float)) or not self.coverage > 0:
            raise ConfigError("coverage must be positive")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.compression_accounting not in ACCOUNTING_VARIANTS:
            raise ConfigError(f"compression_accounting must be one of {ACCOUNTING_VARIANTS}")
        if self.compression_side not in COMPRESSION_SIDES:
            raise ConfigError(f"compression_side must be one of {COMPRESSION_SIDES}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path = ".") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key in ("dynamics", "initial", "noise"):
            if key not in d:
                raise ConfigError(f"missing required field {key!r}")
        return cls(**d, base_dir=str(base_dir))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists() and str(path) in BENCHMARKS:
            path = benchmark_path(str(path))
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "base_dir"}
        return json.loads(json.dumps(d))

    def model(self) -> DynamicsModel:
        try:
            return model_from_dict(self.dynamics, self.base_dir)
        except (KeyError, TypeError, ValueError, OSError) as exc:
            raise ConfigError(f"dynamics: {exc}") from exc

    def balls(self) -> tuple[AmbiguityBall, AmbiguityBall]:
        init = _mixture(self.initial, "initial")
        noise = _mixture(self.noise, "noise")
        if init.dim != noise.dim:
            raise ConfigError("initial and noise dimensions differ")
        return (AmbiguityBall(init, self.initial["radius"], self.rho),
                AmbiguityBall(noise, self.noise["radius"], self.rho))

    def propagation(self) -> PropagationConfig:
        return PropagationConfig(rho=self.rho, budget=self.budget, coverage=float(self.coverage),
                                 n_compress=self.n_compress, seed=self.seed,
                                 compression_accounting=self.compression_accounting,
                                 compression_side=self.compression_side)

    def with_params(self, **params) -> "ExperimentConfig":
        cfg = replace(self)
        for key, value in params.items():
            if key == "theta_x0":
                cfg = replace(cfg, initial={**cfg.initial, "radius": value})
            elif key == "theta_omega":
                cfg = replace(cfg, noise={**cfg.noise, "radius": value})
            elif key in SWEEP_AXES or key == "seed":
                cfg = replace(cfg, **{key: value})
            else:
                raise ConfigError(f"cannot sweep over {key!r}; axes are {SWEEP_AXES}")
        return cfg


def run_experiment(cfg: ExperimentConfig, model: DynamicsModel | None = None) -> Trace:
    model = model or cfg.model()
    initial, noise = cfg.balls()
    if model.dim != initial.center.dim:
        raise ConfigError(f"dynamics dimension {model.dim} does not match the initial "
                          f"distribution dimension {initial.center.dim}")
    trace = propagate(initial, noise, model, cfg.horizon, cfg.propagation())
    trace.config = {**trace.config, "name": cfg.name}
    return trace


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


STEP_FIELDS = ("theta_delta", "theta_compr", "alpha_hat", "beta_term", "support_size", "wall_time")


def steps_csv(trace: Trace) -> str:
    """One row per ball; row ``k`` holds the step that produced ball ``k`` (zeros for k = 0)."""
    dim = trace.initial.center.dim
    header = ["k", "theta_x", *STEP_FIELDS] + [f"center_mean_{a}" for a in range(dim)]
    rows = [[0, trace.initial.radius, 0.0, 0.0, 0.0, 0.0, trace.initial.center.n_components, 0.0,
             *trace.initial.center.mean()]]
    for ball, rep in trace.steps:
        rows.append([rep.k + 1, rep.theta_x, *(getattr(rep, f) for f in STEP_FIELDS),
                     *ball.center.mean()])
    return _csv_text(header, rows)


def write_trace(trace: Trace, out: Path) -> None:
    _atomic_write(out / "trace.json", trace.to_json())
    _atomic_write(out / "steps.csv", steps_csv(trace))


def combination_seed(base_seed: int, params: dict) -> int:
    key = json.dumps([base_seed, sorted(params.items())], sort_keys=True)
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def load_sweep(path) -> dict[str, list]:
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read sweep spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep spec {path} is not valid JSON: {exc}") from exc
    axes = spec.get("axes", spec) if isinstance(spec, dict) else None
    if not isinstance(axes, dict) or not axes:
        raise ConfigError("sweep spec must list at least one axis")
    for name, values in axes.items():
        if name not in SWEEP_AXES:
            raise ConfigError(f"cannot sweep over {name!r}; axes are {SWEEP_AXES}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis {name!r} needs a nonempty list of values")
    return axes


def _sweep_one(args):
    cfg, params = args
    trace = run_experiment(cfg.with_params(**params))
    return float(trace.radii[-1])


def run_sweep(cfg: ExperimentConfig, axes: dict[str, list], jobs: int = 1,
              per_combination_seeds: bool = True) -> list[dict]:
    """Run every combination of the axes; rows come back in lexicographic order."""
    names = list(axes)
    grids = [sorted(axes[n]) for n in names]
    combos = [dict(zip(names, values)) for values in itertools.product(*grids)]
    tasks = []
    for params in combos:
        seed = combination_seed(cfg.seed, params) if per_combination_seeds else cfg.seed
        tasks.append((cfg.with_params(**params, seed=seed), params))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            finals = list(pool.map(_sweep_one, tasks))
    else:
        finals = [_sweep_one(t) for t in tasks]
    return [{**params, "seed": task[0].seed, "theta_K": theta}
            for (task, params, theta) in zip(tasks, combos, finals)]


def table_csv(rows: list[dict]) -> str:
    header = list(rows[0])
    return _csv_text(header, [[r[h] for h in header] for r in rows])


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg = cfg.with_params(seed=args.seed)
    if args.compression_accounting is not None:
        cfg = replace(cfg, compression_accounting=args.compression_accounting)
    return cfg


def _validate(cfg: ExperimentConfig, trace: Trace, model: DynamicsModel, out: Path) -> int:
    v = cfg.validation
    report = containment_report(trace, model, trace.initial.center, trace.noise.center,
                                n_samples=int(v.get("n_samples", 10_000)),
                                seed=int(v.get("seed", cfg.seed)),
                                n_distance=v.get("n_distance", 2000))
    _atomic_write(out / "validation.json", report.to_json())
    _atomic_write(out / "validation.csv", report.csv_text())
    print(f"mean-containment violations: {report.mean_violations}/{len(report.rows)}; "
          f"distance diagnostics over slack: {report.w_violations}/{len(report.rows)}")
    return report.mean_violations


def cmd_run(args) -> int:
    cfg = _apply_overrides(ExperimentConfig.load(args.config), args)
    model = cfg.model()
    trace = run_experiment(cfg, model)
    out = Path(args.out)
    write_trace(trace, out)
    print(f"{cfg.name}: theta_{cfg.horizon} = {trace.radii[-1]:.6g} (written to {out})")
    if getattr(args, "validate", False):
        _validate(cfg, trace, model, out)
    return EXIT_OK


def cmd_validate(args) -> int:
    args.validate = True
    return cmd_run(args)


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(ExperimentConfig.load(args.config), args)
    axes = load_sweep(args.sweep)
    rows = run_sweep(cfg, axes, jobs=args.jobs)
    out = Path(args.out)
    _atomic_write(out / "table.csv", table_csv(rows))
    for row in rows:
        print("  ".join(f"{k}={_fmt(v) if k == 'theta_K' else v}" for k, v in row.items()
                        if k != "seed"))
    return EXIT_OK


def cmd_fixed_point(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    model = cfg.model()
    L = lipschitz_bound(model)
    theta_omega = float(cfg.noise["radius"])
    eps = args.epsilon if args.epsilon is not None else float(cfg.fixed_point.get("epsilon", 0.0))
    if eps < 0:
        raise ConfigError("epsilon must be nonnegative")
    beta_free = not (isinstance(model, PiecewiseLinearModel) and len(model.modes) > 1)
    print(f"lipschitz_bound: {L:.17g}")
    print(f"epsilon: {eps:.17g}")
    if L >= 1:
        print(f"not contractive: Lipschitz bound {L:.6g} >= 1, no fixed-point radius exists")
        return EXIT_NOT_CONTRACTIVE
    print(f"theta_star: {fixed_point_bound(theta_omega, L, eps, cfg.rho):.17g}")
    if beta_free:
        print("qualifies: yes (L < 1 with a beta-free linearization)")
    else:
        print("qualifies: no (switching between modes needs beta > 0; "
              "the bound uses the largest mode gain only)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wassprop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("config", help="experiment JSON file or a bundled benchmark name")
        p.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
        p.add_argument("--compression-accounting", choices=ACCOUNTING_VARIANTS, default=None)
        if out:
            p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("run", help="propagate the ambiguity ball and write trace.json/steps.csv")
    common(p)
    p.add_argument("--validate", action="store_true", help="also write validation.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid and write table.csv")
    common(p)
    p.add_argument("sweep", help="sweep JSON: {\"axes\": {\"budget\": [10, 100], ...}}")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="run and check containment by Monte Carlo")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fixed-point", help="report the contraction fixed-point radius")
    common(p, out=False)
    p.add_argument("--epsilon", type=float, default=None, help="per-step quantization ceiling")
    p.set_defaults(func=cmd_fixed_point)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
