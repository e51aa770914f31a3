"""Experiment drivers: synthetic convergence runs, depth sweeps, the
classification benchmark, and the certification suites.

Every driver consumes one ``ExperimentConfig``, writes per-run trace files
plus a ``manifest.json`` into the output directory, and returns a report
dict. Reports are pure folds over the persisted files (see ``report``), so
re-running report generation without retraining reproduces them exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import report as report_mod
from .linalg import zca_whiten
from .losses import LossModel, scaled_mse, softmax_ce
from .metrics import align_and_distance, basin_radius
from .mnist import MnistDataset, load_mnist_idx, synthetic_classification
from .network import (
    INIT_NEAR_TEACHER,
    INIT_ORTHOGONAL,
    INIT_UNIFORM_FAN_IN,
    NetworkShape,
    TeacherInstance,
    init_student,
    make_teacher,
)
from .optim import (
    GD,
    RGD,
    DivergenceError,
    OptimizerConfig,
    TrainingData,
    contraction_factor,
    fit_log_linear,
    run,
)
from .stiefel import RetractionSingularityError
from .traces import emit_traces

SYNTH_THEOREM = "synth-theorem"
SYNTH_SWEEP = "synth-sweep"
MNIST = "mnist"
CERTIFY_LEMMA1 = "certify-lemma1"
CERTIFY_LEMMA2 = "certify-lemma2"
CERTIFY_GEOMETRY = "certify-geometry"

KINDS = (SYNTH_THEOREM, SYNTH_SWEEP, MNIST, CERTIFY_LEMMA1, CERTIFY_LEMMA2, CERTIFY_GEOMETRY)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class CalibrationError(RuntimeError):
    """Could not place an initialization inside the requested dist^2 band."""


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    out_dir: str = "runs"
    seeds: tuple = (0,)
    fmt: str = "csv"
    workers: int = 1
    depth: int = 3
    dims: tuple | None = None
    activation: str = "linear"
    activations: tuple = ("linear", "relu")
    n_samples: int | None = None
    w1_spectral_norm: float = 1.0
    kappa: float = 1.0
    loss: str = "scaled-mse"
    mu: float | None = None
    gamma: float | None = None
    max_iters: int | None = None
    re_retract_every: int = 100
    target_decrease: float = 1e-12
    depths: tuple = (2, 3, 4, 5, 6)
    epsilon: float = 1e-8
    mnist_images: str | None = None
    mnist_labels: str | None = None
    data_source: str = "idx"
    subset: int | None = 10000
    zca: bool = False
    zca_eps: float = 1e-5
    grid_mu: tuple = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
    grid_gamma: tuple = (1.0, 10.0, 100.0)
    mnist_depths: tuple = (3, 4)
    threshold_factor: float = 1.5
    sample_count: int | None = None

    _TUPLE_FIELDS = (
        "seeds", "dims", "activations", "depths", "grid_mu", "grid_gamma", "mnist_depths",
    )

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        for name in self._TUPLE_FIELDS:
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.fmt not in ("csv", "jsonl"):
            raise ConfigError(f"fmt must be csv or jsonl, got {self.fmt!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.data_source not in ("idx", "synthetic"):
            raise ConfigError(f"data_source must be idx or synthetic, got {self.data_source!r}")
        if self.loss not in ("scaled-mse", "softmax-ce"):
            raise ConfigError(f"loss must be scaled-mse or softmax-ce, got {self.loss!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for name in self._TUPLE_FIELDS:
            if out[name] is not None:
                out[name] = list(out[name])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def loss_model(self) -> LossModel:
        return scaled_mse() if self.loss == "scaled-mse" else softmax_ce()


def default_dims(depth: int) -> tuple:
    """Synthetic dimension chain: narrow input, wider hidden stack, wide output."""
    return tuple([6] + [8] * (depth - 1) + [10])


def sweep_dims(depth: int) -> tuple:
    return tuple([4] + [6] * depth)


def mnist_preset_dims(depth: int) -> tuple:
    """The benchmark architecture: 784 -> 100 (free) -> ... -> 50 -> 10."""
    if depth < 3:
        raise ConfigError(f"the benchmark preset needs depth >= 3, got {depth}")
    return tuple([784, 100] + [100] * (depth - 3) + [50, 10])


def resolve_shape(cfg: ExperimentConfig, depth=None, activation=None) -> NetworkShape:
    depth = depth if depth is not None else cfg.depth
    activation = activation if activation is not None else cfg.activation
    if cfg.kind == MNIST:
        dims = mnist_preset_dims(depth)
    elif cfg.dims is not None:
        dims = cfg.dims
    else:
        dims = default_dims(depth)
    return NetworkShape.create(dims, activation=activation)


def calibrate_basin_init(
    instance: TeacherInstance,
    model: LossModel,
    seed,
    lo_frac: float = 0.3,
    hi_frac: float = 0.95,
    max_steps: int = 50,
):
    """Bisect the perturbation magnitude until dist^2 lands in a basin band.

    The same seed is reused at every trial magnitude, so the perturbation
    direction is fixed and the measured dist^2 varies continuously with the
    magnitude. Returns (network, dist_sq, magnitude).
    """
    basin = basin_radius(instance, model)
    shape = instance.shape

    def measure(m):
        net = init_student(
            shape, seed, scheme=INIT_NEAR_TEACHER, teacher=instance.teacher, magnitude=m
        )
        d = align_and_distance(net, instance.teacher, instance.spec_norm_y).dist_sq
        return net, d

    n = instance.depth
    # dist^2(m) <= (4 (N-1) ||Y*||^2 + 1) m^2, so this start is at or below the basin
    coeff = 4.0 * (n - 1) * instance.spec_norm_y**2 + 1.0
    m_lo, m_hi = 0.0, math.sqrt(basin / coeff)
    net, d = measure(m_hi)
    grows = 0
    while d < lo_frac * basin and grows < 60:
        m_lo, m_hi = m_hi, 2.0 * m_hi
        net, d = measure(m_hi)
        grows += 1
    m = m_hi
    for _ in range(max_steps):
        if lo_frac * basin <= d <= hi_frac * basin:
            return net, d, m
        if d > hi_frac * basin:
            m_hi = m
        else:
            m_lo = m
        m = 0.5 * (m_lo + m_hi)
        net, d = measure(m)
    raise CalibrationError(
        f"no magnitude found with dist^2 in [{lo_frac}, {hi_frac}] x basin after {max_steps} steps"
    )


def _ensure_out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg: ExperimentConfig, runs: list, summary: dict) -> None:
    manifest = {"config": cfg.to_dict(), "runs": runs, "summary": summary}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _theorem_horizon(factor: float, target: float) -> int:
    return int(math.ceil(math.log(target) / math.log(factor)))


def _map_jobs(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _run_theorem_seed(args):
    cfg_dict, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    shape = resolve_shape(cfg)
    model = cfg.loss_model()
    n = cfg.n_samples or shape.dims[0]
    instance = make_teacher(shape, n, seed, cfg.w1_spectral_norm, cfg.kappa)
    net0, dist0, magnitude = calibrate_basin_init(instance, model, seed)
    ocfg = OptimizerConfig.for_theorem(
        instance, model, max_iters=0, mu=cfg.mu, re_retract_every=cfg.re_retract_every
    )
    factor = contraction_factor(instance, model, ocfg)
    horizon = _theorem_horizon(factor, cfg.target_decrease)
    ocfg = dataclasses.replace(
        ocfg, max_iters=cfg.max_iters or horizon, stop_tol=cfg.target_decrease * dist0
    )
    trace = run(net0, instance, model, ocfg)
    fitted_ratio, r2 = fit_log_linear(trace.dist_history())
    reached = trace.stop_reason == "stop-tol" and trace.iterations <= horizon
    fname = f"theorem_seed{seed}.{cfg.fmt}"
    emit_traces(trace, cfg.fmt, Path(cfg.out_dir) / fname)
    return {
        "seed": seed,
        "trace_file": fname,
        "dist0": dist0,
        "basin": basin_radius(instance, model),
        "magnitude": magnitude,
        "mu": ocfg.mu,
        "gamma": ocfg.gamma,
        "theorem_factor": factor,
        "horizon": horizon,
        "iterations": trace.iterations,
        "violations": trace.contraction_violations,
        "fitted_ratio": fitted_ratio,
        "r_squared": r2,
        "final_dist_sq": trace.records[-1].dist_sq,
        "reached_target_in_horizon": bool(reached),
        "sigma_min_y": instance.sigma_min_y,
        "kappa_y": instance.kappa_y,
    }


def run_synth_theorem(cfg: ExperimentConfig) -> dict:
    """Contraction study: basin-calibrated starts, guaranteed rates, rate fits."""
    if cfg.kind != SYNTH_THEOREM:
        raise ConfigError(f"expected kind {SYNTH_THEOREM}, got {cfg.kind}")
    if cfg.loss != "scaled-mse":
        raise ConfigError("the contraction guarantee is certified for scaled-mse only")
    out = _ensure_out_dir(cfg)
    runs = _map_jobs(_run_theorem_seed, [(cfg.to_dict(), s) for s in cfg.seeds], cfg.workers)
    summary = {
        "total_violations": sum(r["violations"] for r in runs),
        "all_reached_in_horizon": all(r["reached_target_in_horizon"] for r in runs),
        "all_fits_below_factor": all(r["fitted_ratio"] <= r["theorem_factor"] for r in runs),
        "min_r_squared": min(r["r_squared"] for r in runs),
        "seeds": list(cfg.seeds),
    }
    _write_manifest(out, cfg, runs, summary)
    report_mod.render_synth_figures(out)
    return {"kind": cfg.kind, "runs": runs, "summary": summary}


def _run_sweep_cell(args):
    cfg_dict, depth, seed, kappa = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    shape = NetworkShape.create(sweep_dims(depth))
    model = cfg.loss_model()
    n = cfg.n_samples or shape.dims[0]
    instance = make_teacher(shape, n, seed, cfg.w1_spectral_norm, kappa)
    net0, dist0, _ = calibrate_basin_init(instance, model, seed)
    ocfg = OptimizerConfig.for_theorem(
        instance, model, max_iters=0, mu=cfg.mu, re_retract_every=cfg.re_retract_every
    )
    factor = contraction_factor(instance, model, ocfg)
    horizon = _theorem_horizon(factor, cfg.epsilon)
    ocfg = dataclasses.replace(
        ocfg, max_iters=cfg.max_iters or (horizon + 100), stop_tol=cfg.epsilon * dist0
    )
    fname = f"sweep_depth{depth}_seed{seed}_kappa{kappa:g}.{cfg.fmt}"
    try:
        trace = run(net0, instance, model, ocfg)
        emit_traces(trace, cfg.fmt, Path(cfg.out_dir) / fname)
        return {
            "depth": depth,
            "seed": seed,
            "kappa": kappa,
            "kappa_y": instance.kappa_y,
            "trace_file": fname,
            "dist0": dist0,
            "iterations": trace.iterations,
            "reached": trace.stop_reason == "stop-tol",
            "diverged": False,
        }
    except DivergenceError:
        return {
            "depth": depth,
            "seed": seed,
            "kappa": kappa,
            "kappa_y": instance.kappa_y,
            "trace_file": None,
            "dist0": dist0,
            "iterations": 0,
            "reached": False,
            "diverged": True,
        }


def run_synth_sweep(cfg: ExperimentConfig) -> dict:
    """Iterations-to-epsilon as depth grows, at fixed target conditioning."""
    if cfg.kind != SYNTH_SWEEP:
        raise ConfigError(f"expected kind {SYNTH_SWEEP}, got {cfg.kind}")
    out = _ensure_out_dir(cfg)
    jobs = [(cfg.to_dict(), d, s, cfg.kappa) for d in cfg.depths for s in cfg.seeds]
    # paired runs at the shallowest depth with doubled conditioning
    jobs += [(cfg.to_dict(), cfg.depths[0], s, 2.0 * cfg.kappa) for s in cfg.seeds]
    runs = _map_jobs(_run_sweep_cell, jobs, cfg.workers)
    summary = report_mod.build_sweep_summary(runs, cfg.depths, cfg.kappa, cfg.epsilon)
    _write_manifest(out, cfg, runs, summary)
    report_mod.render_sweep_figures(out)
    return {"kind": cfg.kind, "runs": runs, "summary": summary}


def load_benchmark_data(cfg: ExperimentConfig) -> MnistDataset:
    if cfg.data_source == "idx":
        if not cfg.mnist_images or not cfg.mnist_labels:
            raise ConfigError(
                "no dataset: supply --mnist-images and --mnist-labels pointing at IDX files, "
                "or pass --synthetic to train on generated classification data"
            )
        data = load_mnist_idx(cfg.mnist_images, cfg.mnist_labels)
    else:
        d0 = mnist_preset_dims(3)[0]
        data = synthetic_classification(d0, cfg.subset or 10000, seed=max(cfg.seeds) + 104729)
    if cfg.subset is not None and data.n_samples > cfg.subset:
        data = data.subset(cfg.subset)
    if cfg.zca:
        data = MnistDataset(images=zca_whiten(data.images, cfg.zca_eps), labels=data.labels)
    return data


def _benchmark_grid(cfg: ExperimentConfig, algorithm: str):
    if algorithm == RGD:
        return [(mu, gamma) for mu in cfg.grid_mu for gamma in cfg.grid_gamma]
    return [(mu, 1.0) for mu in cfg.grid_mu]


def run_mnist(cfg: ExperimentConfig) -> dict:
    """Grid-searched unconstrained vs constrained training on labeled data."""
    if cfg.kind != MNIST:
        raise ConfigError(f"expected kind {MNIST}, got {cfg.kind}")
    out = _ensure_out_dir(cfg)
    data = load_benchmark_data(cfg)
    model = softmax_ce()
    seed = cfg.seeds[0]
    max_iters = cfg.max_iters or 250
    train_data = TrainingData(x=data.images, y_star=data.labels)
    runs = []
    for depth in cfg.mnist_depths:
        for activation in cfg.activations:
            shape = NetworkShape.create(mnist_preset_dims(depth), activation=activation)
            for algorithm in (RGD, GD):
                scheme = INIT_UNIFORM_FAN_IN if algorithm == RGD else INIT_ORTHOGONAL
                net0 = init_student(shape, seed, scheme=scheme)
                for mu, gamma in _benchmark_grid(cfg, algorithm):
                    ocfg = OptimizerConfig(
                        mu=mu,
                        gamma=gamma,
                        max_iters=max_iters,
                        algorithm=algorithm,
                        re_retract_every=cfg.re_retract_every,
                    )
                    fname = (
                        f"bench_N{depth}_{activation}_{algorithm}_mu{mu:g}_gamma{gamma:g}.{cfg.fmt}"
                    )
                    try:
                        trace = run(net0, train_data, model, ocfg)
                        emit_traces(trace, cfg.fmt, out / fname)
                        final_loss, iters, diverged = trace.records[-1].loss, trace.iterations, False
                    except (DivergenceError, RetractionSingularityError):
                        fname, final_loss, iters, diverged = None, float("inf"), 0, True
                    runs.append(
                        {
                            "depth": depth,
                            "activation": activation,
                            "algorithm": algorithm,
                            "mu": mu,
                            "gamma": gamma,
                            "seed": seed,
                            "trace_file": fname,
                            "final_loss": final_loss,
                            "iterations": iters,
                            "diverged": diverged,
                        }
                    )
    summary = report_mod.build_benchmark_summary(runs, out, cfg.threshold_factor)
    _write_manifest(out, cfg, runs, summary)
    report_mod.render_benchmark_figures(out)
    return {"kind": cfg.kind, "runs": runs, "summary": summary}


def run_certify(cfg: ExperimentConfig) -> dict:
    """Dispatch to a sampling suite; emits JSONL records plus a summary."""
    from . import certify

    out = _ensure_out_dir(cfg)
    if cfg.kind == CERTIFY_GEOMETRY:
        result = certify.geometry_suite(cfg.sample_count or 1000, cfg.seeds[0])
    elif cfg.kind == CERTIFY_LEMMA1:
        result = certify.distance_bounds_suite(cfg.sample_count or 100, cfg.seeds[0])
    elif cfg.kind == CERTIFY_LEMMA2:
        result = certify.regularity_suite(cfg.sample_count or 50, cfg.seeds[0])
    else:
        raise ConfigError(f"not a certification kind: {cfg.kind}")
    stream = out / f"{cfg.kind}.jsonl"
    with open(stream, "w") as fh:
        for rec in result["records"]:
            fh.write(json.dumps(rec) + "\n")
    _write_manifest(out, cfg, [], result["summary"])
    return {"kind": cfg.kind, "summary": result["summary"], "stream": str(stream)}


def run_experiment(cfg: ExperimentConfig) -> dict:
    if cfg.kind == SYNTH_THEOREM:
        return run_synth_theorem(cfg)
    if cfg.kind == SYNTH_SWEEP:
        return run_synth_sweep(cfg)
    if cfg.kind == MNIST:
        return run_mnist(cfg)
    return run_certify(cfg)
