"""Delimited table output and rendered figures.

Every CSV this package emits is RFC-4180 (CRLF line endings, UTF-8, '.'
decimal separator) with a mandatory header whose first column carries the
schema version, so downstream scripts can pin the layout.  Floats are
written with repr so identical runs produce identical bytes.

Figures are rendered with the Agg backend; the report command drops them
next to the delimited files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .density import eta_values  # noqa: E402

TABLE_SCHEMA_VERSION = 1

TABLE_COLUMNS = (
    "schema_version", "scenario", "estimator", "truth_param", "n1", "n2",
    "n_replicates", "n_failed",
    "kl_mean", "kl_bias", "kl_variance",
    "kls_mean", "kls_bias", "kls_variance",
    "mse_p1", "mse_p1_bias_sq", "mse_p1_variance",
    "mse_p2", "mse_p2_bias_sq", "mse_p2_variance",
)

DENSITY_COLUMNS = ("schema_version", "sample", "x", "density")

EVAL_COLUMNS = ("schema_version", "kl", "skl")


def _cell(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_rows(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])


def write_table(rows: list[dict], path) -> None:
    """Write scenario table rows in the fixed versioned column order."""
    out = [{**r, "schema_version": TABLE_SCHEMA_VERSION} for r in rows]
    _write_rows(path, TABLE_COLUMNS, out)


def write_eval_report(path, kl_value, skl_value) -> None:
    _write_rows(path, EVAL_COLUMNS, [{
        "schema_version": TABLE_SCHEMA_VERSION,
        "kl": kl_value, "skl": skl_value,
    }])


def density_grid(domain, n_points: int) -> np.ndarray:
    return np.linspace(domain.lower, domain.upper, n_points)


def density_on_grid(model, theta, h, l: int, n_points: int):
    """(grid, density) for sample l, normalized by trapezoid on the grid.

    The fit artifact CSV uses this exact normalization so that re-reading
    the artifact reproduces the file values without a quadrature rule.
    """
    x = density_grid(model.domains[l], n_points)
    eta = eta_values(model, theta, h, x, l)
    eta = eta - np.max(eta)
    raw = np.exp(eta)
    mass = np.trapezoid(raw, x)
    return x, raw / mass


def write_density_csv(path, model, theta, h, n_points: int) -> None:
    rows = []
    for l in range(model.m):
        x, dens = density_on_grid(model, theta, h, l, n_points)
        for xi, di in zip(x, dens):
            rows.append({"schema_version": TABLE_SCHEMA_VERSION,
                         "sample": l, "x": xi, "density": di})
    _write_rows(path, DENSITY_COLUMNS, rows)


# ------------------------------------------------------------------ #
# Figures
# ------------------------------------------------------------------ #

def render_density_figure(path, model, theta, h, samples, n_points: int = 512,
                          title: str | None = None,
                          parametric_overlay: bool = False) -> None:
    """Histogram of each sample with its fitted density curve.

    With ``parametric_overlay`` the normalized parametric component
    exp(alpha)/int exp(alpha) is drawn dashed next to the full fit, which
    is the interesting comparison when the form is itself a density model.
    """
    fig, axes = plt.subplots(1, model.m, figsize=(5.5 * model.m, 3.8),
                             squeeze=False)
    for l in range(model.m):
        ax = axes[0][l]
        x, dens = density_on_grid(model, theta, h, l, n_points)
        group = samples.groups[l] if samples is not None else None
        if group is not None and group.size:
            ax.hist(group, bins=24, density=True, color="#b5c7d3",
                    edgecolor="white", linewidth=0.4)
        ax.plot(x, dens, color="#1f4e79", linewidth=1.8, label="fitted")
        if parametric_overlay and model.p:
            alpha = model.form.eval(x, np.asarray(theta, dtype=float), l)
            alpha = alpha - np.max(alpha)
            para = np.exp(alpha)
            para /= np.trapezoid(para, x)
            ax.plot(x, para, color="#c05131", linewidth=1.3, linestyle="--",
                    label="parametric part")
        ax.set_xlabel("x" if model.m == 1 else f"x (sample {l})")
        ax.set_ylabel("density")
        if model.m > 1 or parametric_overlay:
            ax.legend(frameon=False, fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_table_figure(path, rows: list[dict]) -> None:
    """Mean KL against sample size, one line per estimator."""
    by_est: dict[str, list[tuple[int, float]]] = {}
    for r in rows:
        if r.get("kl_mean") in (None, ""):
            continue
        n = int(r["n1"]) + (int(r["n2"]) if r.get("n2") not in (None, "") else 0)
        by_est.setdefault(str(r["estimator"]), []).append((n, float(r["kl_mean"])))
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for est, pts in sorted(by_est.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                linewidth=1.4, label=est)
    ax.set_xlabel("total sample size")
    ax.set_ylabel("mean KL")
    ax.set_yscale("log")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def count_local_maxima(values: np.ndarray) -> int:
    """Strict interior local maxima of a sampled curve, plateaus collapsed."""
    v = np.asarray(values, dtype=float)
    keep = np.concatenate([[True], np.diff(v) != 0.0])
    w = v[keep]
    if w.size < 3:
        return 0
    interior = (w[1:-1] > w[:-2]) & (w[1:-1] > w[2:])
    return int(np.count_nonzero(interior))
