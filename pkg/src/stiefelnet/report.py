"""Report generation: pure folds over persisted manifests and trace files.

``build_report`` recomputes every ordering and fit from the files an
experiment left behind, writes ``report.json`` and ``report.csv``, and
renders matplotlib figures next to them. Nothing here retrains or resamples,
so regenerating a report is deterministic given the same output directory.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .traces import read_traces  # noqa: E402


class ReportError(RuntimeError):
    """The output directory lacks a manifest or traces needed for a report."""


def load_manifest(out_dir) -> dict:
    path = Path(out_dir) / "manifest.json"
    if not path.exists():
        raise ReportError(f"no manifest.json in {out_dir}; run an experiment first")
    return json.loads(path.read_text())


def iterations_to_threshold(loss_values, tau: float):
    """First iteration index at which the loss is at or below ``tau``."""
    for i, v in enumerate(loss_values):
        if v is not None and v <= tau:
            return i
    return None


def _trace_losses(out_dir, trace_file):
    rows = read_traces(Path(out_dir) / trace_file)
    return [r["loss"] for r in rows]


def _cell_key(run):
    return (run["depth"], run["activation"], run["algorithm"])


def _best_final_loss(runs):
    vals = [r["final_loss"] for r in runs if not r.get("diverged")]
    return min(vals) if vals else float("inf")


def _cell_iterations(out_dir, runs, tau):
    """Fewest iterations to ``tau`` over a cell's grid (inf if never reached)."""
    best = math.inf
    best_run = None
    for r in runs:
        if r.get("diverged") or not r.get("trace_file"):
            continue
        it = iterations_to_threshold(_trace_losses(out_dir, r["trace_file"]), tau)
        if it is not None and it < best:
            best = it
            best_run = r
    return best, best_run


def build_benchmark_summary(runs, out_dir, threshold_factor: float = 1.5) -> dict:
    """Orderings between methods, depths, and activations at common thresholds.

    For each comparison the loss threshold is ``threshold_factor`` times the
    worse of the compared cells' best final losses, so both sides can reach
    it; the compared quantity is each cell's fewest iterations to that
    threshold over its grid.
    """
    cells = {}
    for r in runs:
        cells.setdefault(_cell_key(r), []).append(r)
    depths = sorted({k[0] for k in cells})
    activations = sorted({k[1] for k in cells})

    def common_tau(keys):
        return threshold_factor * max(_best_final_loss(cells[k]) for k in keys)

    rgd_vs_gd = []
    for depth in depths:
        for act in activations:
            k_rgd, k_gd = (depth, act, "rgd"), (depth, act, "gd")
            if k_rgd not in cells or k_gd not in cells:
                continue
            tau = common_tau([k_rgd, k_gd])
            it_rgd, run_rgd = _cell_iterations(out_dir, cells[k_rgd], tau)
            it_gd, run_gd = _cell_iterations(out_dir, cells[k_gd], tau)
            rgd_vs_gd.append(
                {
                    "depth": depth,
                    "activation": act,
                    "threshold": tau,
                    "iters_rgd": None if math.isinf(it_rgd) else it_rgd,
                    "iters_gd": None if math.isinf(it_gd) else it_gd,
                    "best_rgd": {k: run_rgd[k] for k in ("mu", "gamma")} if run_rgd else None,
                    "best_gd": {k: run_gd[k] for k in ("mu", "gamma")} if run_gd else None,
                    "rgd_faster": it_rgd < it_gd,
                }
            )

    depth_monotone = []
    for act in activations:
        for alg in ("rgd", "gd"):
            keys = [(d, act, alg) for d in depths if (d, act, alg) in cells]
            if len(keys) < 2:
                continue
            tau = common_tau(keys)
            iters = [_cell_iterations(out_dir, cells[k], tau)[0] for k in keys]
            ok = all(a < b for a, b in zip(iters, iters[1:]))
            depth_monotone.append(
                {
                    "activation": act,
                    "algorithm": alg,
                    "threshold": tau,
                    "depths": [k[0] for k in keys],
                    "iters": [None if math.isinf(i) else i for i in iters],
                    "deeper_is_slower": ok,
                }
            )

    relu_vs_linear = []
    if "linear" in activations and "relu" in activations:
        for depth in depths:
            for alg in ("rgd", "gd"):
                k_lin, k_rel = (depth, "linear", alg), (depth, "relu", alg)
                if k_lin not in cells or k_rel not in cells:
                    continue
                tau = common_tau([k_lin, k_rel])
                it_lin, _ = _cell_iterations(out_dir, cells[k_lin], tau)
                it_rel, _ = _cell_iterations(out_dir, cells[k_rel], tau)
                relu_vs_linear.append(
                    {
                        "depth": depth,
                        "algorithm": alg,
                        "threshold": tau,
                        "iters_linear": None if math.isinf(it_lin) else it_lin,
                        "iters_relu": None if math.isinf(it_rel) else it_rel,
                        "relu_slower": it_rel > it_lin,
                    }
                )

    return {
        "rgd_vs_gd": rgd_vs_gd,
        "depth_monotone": depth_monotone,
        "relu_vs_linear": relu_vs_linear,
        "all_rgd_faster": all(c["rgd_faster"] for c in rgd_vs_gd) if rgd_vs_gd else False,
        "all_deeper_slower": all(c["deeper_is_slower"] for c in depth_monotone)
        if depth_monotone
        else False,
        "all_relu_slower": all(c["relu_slower"] for c in relu_vs_linear)
        if relu_vs_linear
        else False,
    }


def build_sweep_summary(runs, depths, kappa: float, epsilon: float) -> dict:
    """Monotonicity in depth and the depth^2-scaled iteration band."""
    base = [r for r in runs if r["kappa"] == kappa and not r["diverged"] and r["reached"]]
    by_depth = {}
    for r in base:
        by_depth.setdefault(r["depth"], []).append(r["iterations"])
    mean_iters = {d: sum(v) / len(v) for d, v in sorted(by_depth.items())}
    ordered = [mean_iters[d] for d in sorted(mean_iters)]
    nondecreasing = all(a <= b for a, b in zip(ordered, ordered[1:]))
    log_eps = math.log(1.0 / epsilon)
    normalized = {
        d: mean_iters[d] / (d * d * kappa * kappa * log_eps) for d in sorted(mean_iters)
    }
    first = normalized[min(normalized)] if normalized else float("nan")
    band = {d: v / first for d, v in normalized.items()}
    within_band = all(0.25 <= v <= 4.0 for v in band.values())

    doubled = [r for r in runs if r["kappa"] == 2.0 * kappa and not r["diverged"] and r["reached"]]
    kappa_pair = None
    if doubled:
        d0 = min(by_depth) if by_depth else doubled[0]["depth"]
        base_iters = mean_iters.get(d0)
        dbl = [r["iterations"] for r in doubled if r["depth"] == d0]
        if base_iters is not None and dbl:
            dbl_mean = sum(dbl) / len(dbl)
            kappa_pair = {
                "depth": d0,
                "iters_base": base_iters,
                "iters_doubled": dbl_mean,
                "slower_when_doubled": dbl_mean > base_iters,
            }

    return {
        "mean_iterations": {str(d): v for d, v in mean_iters.items()},
        "nondecreasing_in_depth": nondecreasing,
        "normalized_ratio": {str(d): v for d, v in normalized.items()},
        "band_vs_shallowest": {str(d): v for d, v in band.items()},
        "within_factor_4_band": within_band,
        "kappa_pair": kappa_pair,
        "kappa": kappa,
        "epsilon": epsilon,
        "any_diverged": any(r["diverged"] for r in runs),
    }


def _figures_dir(out_dir) -> Path:
    d = Path(out_dir) / "figures"
    d.mkdir(parents=True, exist_ok=True)
    return d


def render_synth_figures(out_dir) -> list:
    """Distance-decay plot per seed with the guaranteed-rate reference line."""
    manifest = load_manifest(out_dir)
    figs = []
    fig_dir = _figures_dir(out_dir)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for run in manifest["runs"]:
        rows = read_traces(Path(out_dir) / run["trace_file"])
        dist = [r["dist_sq"] for r in rows if r["dist_sq"] and r["dist_sq"] > 0]
        ax.semilogy(range(len(dist)), dist, lw=0.8, alpha=0.7)
        if run is manifest["runs"][0] and dist:
            factor = run["theorem_factor"]
            guide = [dist[0] * factor**t for t in range(len(dist))]
            ax.semilogy(range(len(dist)), guide, "k--", lw=1.2, label="guaranteed rate")
    ax.set_xlabel("iteration")
    ax.set_ylabel("squared factor distance")
    ax.legend(loc="upper right")
    fig.tight_layout()
    path = fig_dir / "dist_decay.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    figs.append(path)
    return figs


def render_sweep_figures(out_dir) -> list:
    manifest = load_manifest(out_dir)
    summary = manifest["summary"]
    figs = []
    fig_dir = _figures_dir(out_dir)
    mean_iters = {int(k): v for k, v in summary["mean_iterations"].items()}
    if mean_iters:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        depths = sorted(mean_iters)
        ax.plot(depths, [mean_iters[d] for d in depths], "o-", label="measured")
        scale = mean_iters[depths[0]] / depths[0] ** 2
        ax.plot(depths, [scale * d * d for d in depths], "k--", lw=1.0, label="depth^2 scaling")
        ax.set_xlabel("depth")
        ax.set_ylabel(f"iterations to eps={summary['epsilon']:g}")
        ax.legend()
        fig.tight_layout()
        path = fig_dir / "sweep_iterations.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        figs.append(path)
    return figs


def render_benchmark_figures(out_dir) -> list:
    """Loss curves of each cell's best grid point, one figure per (depth, activation)."""
    manifest = load_manifest(out_dir)
    runs = manifest["runs"]
    threshold_factor = manifest["config"].get("threshold_factor", 1.5)
    cells = {}
    for r in runs:
        cells.setdefault(_cell_key(r), []).append(r)
    figs = []
    fig_dir = _figures_dir(out_dir)
    pairs = sorted({(k[0], k[1]) for k in cells})
    for depth, act in pairs:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        plotted = False
        keys = [(depth, act, alg) for alg in ("rgd", "gd") if (depth, act, alg) in cells]
        if not keys:
            plt.close(fig)
            continue
        tau = threshold_factor * max(_best_final_loss(cells[k]) for k in keys)
        for k in keys:
            _, best_run = _cell_iterations(out_dir, cells[k], tau)
            if best_run is None:
                continue
            losses = _trace_losses(out_dir, best_run["trace_file"])
            label = f"{k[2]} (mu={best_run['mu']:g}, gamma={best_run['gamma']:g})"
            ax.semilogy(range(len(losses)), losses, label=label)
            plotted = True
        ax.axhline(tau, color="gray", lw=0.8, ls=":")
        ax.set_xlabel("iteration")
        ax.set_ylabel("training loss")
        ax.set_title(f"depth {depth}, {act}")
        ax.legend()
        fig.tight_layout()
        path = fig_dir / f"bench_N{depth}_{act}.png"
        if plotted:
            fig.savefig(path, dpi=150)
            figs.append(path)
        plt.close(fig)
    return figs


def _write_rows_csv(path, rows) -> None:
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in keys})


def build_report(out_dir) -> dict:
    """Recompute the summary for whatever experiment lives in ``out_dir``.

    Writes ``report.json`` and ``report.csv`` beside the manifest and
    renders the figures for the experiment kind. Returns the report dict.
    """
    out = Path(out_dir)
    manifest = load_manifest(out)
    kind = manifest["config"]["kind"]
    runs = manifest["runs"]
    if kind == "mnist":
        summary = build_benchmark_summary(
            runs, out, manifest["config"].get("threshold_factor", 1.5)
        )
        rows = summary["rgd_vs_gd"] + summary["relu_vs_linear"]
        figures = render_benchmark_figures(out)
    elif kind == "synth-sweep":
        cfg = manifest["config"]
        summary = build_sweep_summary(runs, tuple(cfg["depths"]), cfg["kappa"], cfg["epsilon"])
        rows = [
            {"depth": d, "mean_iterations": v, "normalized": summary["normalized_ratio"][d]}
            for d, v in summary["mean_iterations"].items()
        ]
        figures = render_sweep_figures(out)
    elif kind == "synth-theorem":
        summary = manifest["summary"]
        rows = [
            {
                k: r[k]
                for k in (
                    "seed", "dist0", "theorem_factor", "fitted_ratio", "r_squared",
                    "iterations", "horizon", "violations", "reached_target_in_horizon",
                )
            }
            for r in runs
        ]
        figures = render_synth_figures(out)
    else:
        summary = manifest["summary"]
        rows = []
        figures = []
    report = {"kind": kind, "summary": summary}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    _write_rows_csv(out / "report.csv", rows)
    report["figures"] = [str(f) for f in figures]
    return report
