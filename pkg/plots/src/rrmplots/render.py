"""Render benchmark figures from result CSVs.

Every figure id maps to one experiment's documented CSV files.  The
rendering layer never recomputes metrics; cumulative distributions are the
empirical cumulative sums of the sorted metric columns, drawn as written.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (7.0, 4.2)
DPI = 120


class MissingColumn(ValueError):
    pass


REQUIRED = {
    "violation.csv": ["sample", "total_power_mse", "total_power_custom", "p_max"],
    "subcarriers.csv": ["n_subcarriers", "r_bar"],
    "trainsize.csv": ["train_size", "r_bar", "t2_s"],
    "layers.csv": ["hidden_layers", "r_bar", "t2_s"],
    "nonstat.csv": ["k", "r_bar_seen", "r_bar_unseen"],
    "trace_frozen.csv": ["t", "r_hat", "r_bar", "mode"],
    "trace_offline.csv": ["t", "r_hat", "r_bar", "mode"],
    "trace_semi.csv": ["t", "r_hat", "r_bar", "mode"],
    "cs2_nonstat.csv": ["k", "r_bar_seen", "r_bar_unseen"],
    "pred_time.csv": ["num_users", "wmmse_per_sample_s", "nn_per_sample_s",
                      "dqn_per_sample_s"],
    "train_curve.csv": ["episode", "final_reward", "random_rate", "maxpower_rate",
                        "wmmse_rate", "phase"],
    "converged_eval.csv": ["episode", "dqn_rate", "random_rate", "maxpower_rate",
                           "wmmse_rate"],
    "cs3_time.csv": ["n_subcarriers", "solver_per_sample_s", "nn_per_sample_s"],
    "cs3_rate.csv": ["method", "mean_rate"],
    "cdf_rates.csv": ["method", "sample", "sum_rate"],
    "cdf_power.csv": ["method", "sample", "bs", "total_power", "p_max"],
}


def read_table(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    required = REQUIRED.get(path.name, [])
    have = set(rows[0]) if rows else set()
    for column in required:
        if column not in have:
            raise MissingColumn(f"{path.name} is missing column {column!r}")
    return rows


def column(rows: list[dict], name: str, cast=float) -> np.ndarray:
    if rows and name not in rows[0]:
        raise MissingColumn(f"missing column {name!r}")
    return np.array([cast(r[name]) for r in rows])


def empirical_cdf(values: np.ndarray):
    """Sorted values against cumulative probability; a constant column
    renders as a step at that value."""
    x = np.sort(np.asarray(values, dtype=float))
    y = np.arange(1, len(x) + 1) / len(x)
    return x, y


def by_method(rows: list[dict]) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for r in rows:
        out.setdefault(r["method"], []).append(r)
    return out


def _new_axes(n=1):
    fig, axes = plt.subplots(1, n, figsize=(FIGSIZE[0] * (1 if n == 1 else 1.6),
                                            FIGSIZE[1]))
    return fig, (axes if n > 1 else [axes])


def _finish(fig, out_path: Path) -> Path:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)
    return out_path


# ---------------------------------------------------------------------------
# figure functions: tables is {filename: rows}


def fig_power_violation(tables, out_path):
    rows = tables["violation.csv"]
    fig, (ax,) = _new_axes()
    sample = column(rows, "sample")
    ax.plot(sample, column(rows, "total_power_mse"), lw=0.8,
            label="squared-error loss")
    ax.plot(sample, column(rows, "total_power_custom"), lw=0.8,
            label="budget-penalty loss")
    ax.axhline(column(rows, "p_max")[0], color="k", ls="--", label="power budget")
    ax.set_xlabel("test sample")
    ax.set_ylabel("predicted total power")
    ax.legend()
    return _finish(fig, out_path)


def _sweep_figure(tables, fname, xcol, out_path, xlabel):
    rows = tables[fname]
    fig, (ax,) = _new_axes()
    ax.plot(column(rows, xcol), column(rows, "r_bar"), marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("relative sum rate (%)")
    return _finish(fig, out_path)


def fig_cs1_subcarriers(tables, out_path):
    return _sweep_figure(tables, "subcarriers.csv", "n_subcarriers", out_path,
                         "subcarriers")


def fig_cs1_trainsize(tables, out_path):
    return _sweep_figure(tables, "trainsize.csv", "train_size", out_path,
                         "training samples")


def fig_cs1_layers(tables, out_path):
    return _sweep_figure(tables, "layers.csv", "hidden_layers", out_path,
                         "hidden layers")


def _nonstat_figure(rows, out_path):
    fig, (ax,) = _new_axes()
    k = column(rows, "k")
    ax.plot(k, column(rows, "r_bar_seen"), marker="o", label="seen data")
    ax.plot(k, column(rows, "r_bar_unseen"), marker="s", label="unseen data")
    ax.set_xscale("log")
    ax.set_xlabel("non-stationarity factor k")
    ax.set_ylabel("relative sum rate (%)")
    ax.legend()
    return _finish(fig, out_path)


def fig_cs1_nonstat(tables, out_path):
    return _nonstat_figure(tables["nonstat.csv"], out_path)


def fig_cs2_nonstat(tables, out_path):
    return _nonstat_figure(tables["cs2_nonstat.csv"], out_path)


def _trace(ax, rows, label):
    ax.plot(column(rows, "t"), column(rows, "r_hat"), lw=0.4, alpha=0.4)
    ax.plot(column(rows, "t"), column(rows, "r_bar"), lw=1.5, label=label)


def fig_ageing(tables, out_path):
    fig, (ax,) = _new_axes()
    _trace(ax, tables["trace_frozen.csv"], "frozen model")
    _trace(ax, tables["trace_offline.csv"], "offline retraining")
    ax.set_xlabel("sample index (time)")
    ax.set_ylabel("relative sum rate (%)")
    ax.legend()
    return _finish(fig, out_path)


def fig_semi_online(tables, out_path):
    fig, (ax,) = _new_axes()
    _trace(ax, tables["trace_semi.csv"], "semi-online serving")
    ax.set_xlabel("sample index (time)")
    ax.set_ylabel("relative sum rate (%)")
    ax.legend()
    return _finish(fig, out_path)


def fig_pred_time(tables, out_path):
    rows = tables["pred_time.csv"]
    fig, (ax,) = _new_axes()
    users = column(rows, "num_users")
    for col, label in (("wmmse_per_sample_s", "WMMSE"),
                       ("dqn_per_sample_s", "DQN"),
                       ("nn_per_sample_s", "DNN")):
        ax.plot(users, column(rows, col), marker="o", label=label)
    ax.set_yscale("log")
    ax.set_xlabel("users")
    ax.set_ylabel("prediction time per sample (s)")
    ax.legend()
    return _finish(fig, out_path)


def fig_dqn_training(tables, out_path):
    rows = tables["train_curve.csv"]
    fig, (ax,) = _new_axes()
    ep = column(rows, "episode")
    ax.plot(ep, column(rows, "final_reward"), lw=0.6, label="DQN")
    for col, label in (("random_rate", "random"), ("maxpower_rate", "max power"),
                       ("wmmse_rate", "WMMSE")):
        ax.plot(ep, column(rows, col), lw=0.5, alpha=0.6, label=label)
    warmup_end = max((int(r["episode"]) for r in rows if r["phase"] == "warmup"),
                     default=None)
    if warmup_end is not None:
        ax.axvline(warmup_end, color="k", ls=":", lw=1, label="warmup ends")
    ax.set_xlabel("episode")
    ax.set_ylabel("sum rate (bits/s/Hz)")
    ax.legend()
    return _finish(fig, out_path)


def fig_dqn_converged(tables, out_path):
    rows = tables["converged_eval.csv"]
    fig, (ax,) = _new_axes()
    labels = ["dqn_rate", "random_rate", "maxpower_rate", "wmmse_rate"]
    means = [float(np.mean(column(rows, c))) for c in labels]
    ax.bar(["DQN", "random", "max power", "WMMSE"], means)
    ax.set_ylabel("mean converged sum rate (bits/s/Hz)")
    return _finish(fig, out_path)


def fig_cs3_time(tables, out_path):
    rows = tables["cs3_time.csv"]
    fig, (ax,) = _new_axes()
    n = column(rows, "n_subcarriers")
    ax.plot(n, column(rows, "solver_per_sample_s"), marker="o", label="iterative solver")
    ax.plot(n, column(rows, "nn_per_sample_s"), marker="s", label="DNN")
    ax.set_yscale("log")
    ax.set_xlabel("subcarriers")
    ax.set_ylabel("time per sample (s)")
    ax.legend()
    return _finish(fig, out_path)


def fig_cs3_rate(tables, out_path):
    rows = tables["cs3_rate.csv"]
    fig, (ax,) = _new_axes()
    ax.bar([r["method"] for r in rows], column(rows, "mean_rate"))
    ax.set_ylabel("mean sum rate (bits/s/Hz)")
    return _finish(fig, out_path)


def fig_cs3_cdf(tables, out_path):
    fig, axes = _new_axes(2)
    for method, rows in sorted(by_method(tables["cdf_rates.csv"]).items()):
        x, y = empirical_cdf(column(rows, "sum_rate"))
        axes[0].plot(x, y, label=method)
    axes[0].set_xlabel("sum rate (bits/s/Hz)")
    axes[0].set_ylabel("cumulative probability")
    axes[0].legend()
    power_rows = tables["cdf_power.csv"]
    for method, rows in sorted(by_method(power_rows).items()):
        x, y = empirical_cdf(column(rows, "total_power"))
        axes[1].plot(x, y, label=method)
    axes[1].axvline(column(power_rows, "p_max")[0], color="k", ls="--",
                    label="power budget")
    axes[1].set_xlabel("per-BS total power (W)")
    axes[1].set_ylabel("cumulative probability")
    axes[1].legend()
    return _finish(fig, out_path)


FIGURES = {
    "power-violation": ("cs1-nonstat", ("violation.csv",), fig_power_violation),
    "cs1-subcarriers": ("cs1-subcarriers", ("subcarriers.csv",), fig_cs1_subcarriers),
    "cs1-trainsize": ("cs1-trainsize", ("trainsize.csv",), fig_cs1_trainsize),
    "cs1-layers": ("cs1-layers", ("layers.csv",), fig_cs1_layers),
    "cs1-nonstat": ("cs1-nonstat", ("nonstat.csv",), fig_cs1_nonstat),
    "ageing": ("ageing", ("trace_frozen.csv", "trace_offline.csv"), fig_ageing),
    "semi-online": ("semi-online", ("trace_semi.csv",), fig_semi_online),
    "cs2-nonstat": ("cs2-nonstat", ("cs2_nonstat.csv",), fig_cs2_nonstat),
    "pred-time": ("cs2b-users", ("pred_time.csv",), fig_pred_time),
    "dqn-training": ("dqn-curves", ("train_curve.csv",), fig_dqn_training),
    "dqn-converged": ("dqn-curves", ("converged_eval.csv",), fig_dqn_converged),
    "cs3-time": ("cs3-time", ("cs3_time.csv",), fig_cs3_time),
    "cs3-rate": ("cs3-rate", ("cs3_rate.csv",), fig_cs3_rate),
    "cs3-cdf": ("cs3-cdf", ("cdf_rates.csv", "cdf_power.csv"), fig_cs3_cdf),
}


def render_figure(figure_id: str, csv_paths: dict, out_path) -> Path:
    """Low-level entry: explicit CSV paths keyed by file name."""
    if figure_id not in FIGURES:
        raise ValueError(f"unknown figure id {figure_id!r}; "
                         f"choose from {sorted(FIGURES)}")
    _, needed, fn = FIGURES[figure_id]
    tables = {}
    for name in needed:
        if name not in csv_paths:
            raise ValueError(f"figure {figure_id!r} needs {name}")
        tables[name] = read_table(Path(csv_paths[name]))
    return fn(tables, Path(out_path))


def latest_run_dir(results_root: Path, experiment: str) -> Path:
    base = Path(results_root) / experiment
    if not base.is_dir():
        raise FileNotFoundError(f"no results for experiment {experiment!r} "
                                f"under {results_root}")
    runs = sorted(p for p in base.iterdir() if p.is_dir())
    if not runs:
        raise FileNotFoundError(f"no runs under {base}")
    return runs[-1]


def render(figure_id: str, results_root, out_dir) -> list[Path]:
    """Render one figure id (or 'all') from a results directory tree."""
    ids = sorted(FIGURES) if figure_id == "all" else [figure_id]
    made = []
    for fid in ids:
        experiment, needed, _ = FIGURES.get(fid, (None, None, None))
        if experiment is None:
            raise ValueError(f"unknown figure id {fid!r}; choose from {sorted(FIGURES)}")
        run = latest_run_dir(Path(results_root), experiment)
        csv_paths = {name: run / name for name in needed}
        made.append(render_figure(fid, csv_paths, Path(out_dir) / f"{fid}.png"))
    return made


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rrmplots", description="Regenerate benchmark figures from result CSVs")
    parser.add_argument("figure", help=f"figure id or 'all'; ids: {sorted(FIGURES)}")
    parser.add_argument("--results", default="results")
    parser.add_argument("--out", default="figures")
    args = parser.parse_args(argv)
    try:
        for path in render(args.figure, args.results, args.out):
            print(f"wrote {path}")
    except (ValueError, FileNotFoundError, MissingColumn) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
