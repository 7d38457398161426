"""The three figure products: learning curves, safe-set evolution, solver
complexity scaling.

Each operation writes one image plus one summary CSV into `out_dir` and
returns the written paths with a few diagnostics.  Run directories are
only ever read.
"""

import csv
import os
import warnings

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib import cm, colors

from .loader import SchemaError, load_bench


def _write_csv(path: str, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _sample_std(stack: np.ndarray) -> np.ndarray:
    # one run has no spread; two or more use the unbiased estimate
    if stack.shape[0] < 2:
        return np.zeros(stack.shape[1])
    return stack.std(axis=0, ddof=1)


def plot_learning_curves(runs, out_dir: str, group_by_seed: bool = True) -> dict:
    """Episode return and cumulative violations against environment steps.

    With `group_by_seed` the runs are treated as seeds of one configuration
    and drawn as a mean line with a sample-std band; otherwise every run
    keeps its own line.  The summary CSV always carries the across-run
    mean and sample std per epoch.
    """
    if not runs:
        raise ValueError("need at least one run directory")
    grid = runs[0].epochs["epoch"]
    for r in runs[1:]:
        if not np.array_equal(r.epochs["epoch"], grid):
            raise SchemaError(f"{r.path} covers epochs {r.epochs['epoch']!r}, "
                              f"other runs cover {grid!r}; cannot aggregate")
    per_epoch = int(runs[0].config.get("steps_per_epoch", 0))
    x = grid * per_epoch if per_epoch else grid
    xlabel = "environment steps" if per_epoch else "epoch"

    ret = np.vstack([r.epochs["episode_return"] for r in runs])
    vio = np.vstack([r.epochs["cum_violations"] for r in runs])
    ret_mean, ret_std = ret.mean(axis=0), _sample_std(ret)
    vio_mean, vio_std = vio.mean(axis=0), _sample_std(vio)

    banded = group_by_seed and len(runs) > 1
    fig, (ax_r, ax_v) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    for ax, mean, std, stack, label in ((ax_r, ret_mean, ret_std, ret,
                                         "episode return"),
                                        (ax_v, vio_mean, vio_std, vio,
                                         "cumulative violations")):
        if group_by_seed:
            ax.plot(x, mean, lw=2.0)
            if banded:
                ax.fill_between(x, mean - std, mean + std, alpha=0.25)
        else:
            for r, line in zip(runs, stack):
                ax.plot(x, line, lw=1.2, label=r.name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(label)
    if not group_by_seed and len(runs) > 1:
        ax_r.legend(fontsize="small")
    fig.tight_layout()

    fig_path = os.path.join(out_dir, "learning_curves.png")
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    csv_path = os.path.join(out_dir, "learning_summary.csv")
    _write_csv(csv_path,
               ("epoch", "return_mean", "return_std",
                "violations_mean", "violations_std"),
               [(int(e), float(rm), float(rs), float(vm), float(vs))
                for e, rm, rs, vm, vs in zip(grid, ret_mean, ret_std,
                                             vio_mean, vio_std)])
    return {"figure": fig_path, "summary": csv_path, "runs": len(runs),
            "banded": banded}


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of an ordered polygon."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def plot_safe_set_evolution(run, out_dir: str, tag: str = "") -> dict:
    """Overlaid per-epoch safe-set hulls, colored by epoch, plus an
    area-vs-epoch CSV."""
    if not run.safe_sets:
        raise SchemaError(f"{run.path} has no safe-set history to plot")
    suffix = f"_{tag}" if tag else ""
    records = sorted(run.safe_sets, key=lambda rec: rec["epoch"])
    epochs = [int(rec["epoch"]) for rec in records]
    norm = colors.Normalize(vmin=epochs[0], vmax=max(epochs[-1], epochs[0] + 1))
    cmap = cm.viridis

    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    areas = []
    for rec in records:
        verts = np.asarray(rec["vertices"], dtype=float)
        loop = np.vstack([verts, verts[:1]])
        ax.plot(loop[:, 0], loop[:, 1], color=cmap(norm(rec["epoch"])), lw=1.3)
        areas.append((int(rec["epoch"]), polygon_area(verts)))
    coords = records[0].get("coords", [0, 1])
    ax.set_xlabel(f"state[{coords[0]}]")
    ax.set_ylabel(f"state[{coords[1]}]")
    fig.colorbar(cm.ScalarMappable(norm=norm, cmap=cmap), ax=ax, label="epoch")
    fig.tight_layout()

    fig_path = os.path.join(out_dir, f"safe_set_evolution{suffix}.png")
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    csv_path = os.path.join(out_dir, f"safe_set_areas{suffix}.csv")
    _write_csv(csv_path, ("epoch", "area"),
               [(e, float(a)) for e, a in areas])
    return {"figure": fig_path, "summary": csv_path, "polygons": len(records)}


def _fit(values: np.ndarray, times: np.ndarray, log_log: bool) -> dict:
    """Least-squares line, in log-log space for the growth sweeps."""
    xs = np.log(values) if log_log else values
    ys = np.log(times) if log_log else times
    if xs.size == 2:
        warnings.warn("two-point sweep, fit has low confidence", stacklevel=2)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    total = ys - ys.mean()
    ss_tot = float(np.dot(total, total))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.dot(resid, resid)) / ss_tot
    return {"slope": float(slope), "intercept": float(intercept),
            "r_squared": r2, "kind": "log_log" if log_log else "linear",
            "points": int(xs.size), "low_confidence": bool(xs.size == 2)}


def plot_complexity(bench_csv: str, out_dir: str) -> dict:
    """Solve-time scaling panels from a benchmark CSV.

    Horizon and width sweeps are drawn log-log with the fitted slope
    annotated; the ensemble-size sweep gets a linear fit.
    """
    sweeps = load_bench(bench_csv)
    if not sweeps:
        raise SchemaError(f"{bench_csv} holds no benchmark rows")

    fits = {}
    fig, axes = plt.subplots(1, len(sweeps), figsize=(3.6 * len(sweeps), 3.2),
                             squeeze=False)
    rows = []
    for ax, (name, (values, median_ms, _mean_ms)) in zip(axes[0],
                                                         sorted(sweeps.items())):
        log_log = name != "ensemble_size"
        if values.size < 2:
            warnings.warn(f"sweep {name} has {values.size} point(s), no fit")
            fit = {"slope": float("nan"), "intercept": float("nan"),
                   "r_squared": float("nan"),
                   "kind": "log_log" if log_log else "linear",
                   "points": int(values.size), "low_confidence": True}
        else:
            fit = _fit(values, median_ms, log_log)
        fits[name] = fit
        if log_log:
            ax.loglog(values, median_ms, "o")
            if np.isfinite(fit["slope"]):
                ax.loglog(values, np.exp(fit["intercept"])
                          * values ** fit["slope"], "-", lw=1.0)
            ax.text(0.05, 0.92, f"slope {fit['slope']:.2f}",
                    transform=ax.transAxes)
        else:
            ax.plot(values, median_ms, "o")
            if np.isfinite(fit["slope"]):
                ax.plot(values, fit["slope"] * values + fit["intercept"],
                        "-", lw=1.0)
            ax.text(0.05, 0.92, f"R^2 {fit['r_squared']:.3f}",
                    transform=ax.transAxes)
        ax.set_xlabel(name)
        ax.set_ylabel("median solve time [ms]")
        rows.append((name, fit["kind"], fit["points"], float(fit["slope"]),
                     float(fit["intercept"]), float(fit["r_squared"]),
                     fit["low_confidence"]))
    fig.tight_layout()

    fig_path = os.path.join(out_dir, "complexity.png")
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    csv_path = os.path.join(out_dir, "complexity_summary.csv")
    _write_csv(csv_path,
               ("sweep", "fit", "points", "slope", "intercept", "r_squared",
                "low_confidence"),
               rows)
    return {"figure": fig_path, "summary": csv_path, "fits": fits}
