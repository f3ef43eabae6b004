"""Command-line surface: fit, simulate, evaluate, report.

Configuration is JSON.  A fit config carries {model, solver, output}; a
simulate config carries {scenario, solver}; an evaluate config names the
truth to score against.  Validation failures exit with code 2 and name
the offending field; estimation failures exit with code 3; outputs are
only written after a run succeeds, so a failed invocation leaves nothing
behind.

Fit artifacts are JSON holding the resolved model, theta-hat, lambda-hat,
the representer coefficients, and solver diagnostics; re-loading one
reproduces the density CSV values exactly, since both go through the same
grid evaluation.
"""

from __future__ import annotations

import csv
import json
import sys
from importlib.resources import files
from pathlib import Path

import click
import jsonschema
import numpy as np

from . import report as report_mod
from .errors import (ConfigurationError, DegenerateInputError, EstimationError,
                     NumericalError, SemidensError)
from .inner import SearchConfig, SplineRep
from .metrics import kl, skl
from .nonlinear import fit_nonlinear
from .profile import fit_additive
from .quadrature import QuadratureRule
from .simulate import SCENARIO_IDS, preset, run_scenario
from .spaces import (SPACE_FAMILIES, Domain, ModelSpec, SampleSet, make_form,
                     make_space)
from .transform import fit_transformation

ARTIFACT_SCHEMA_VERSION = 1

_COMPOSITIONS = ("additive", "nonlinear", "transformation")

_DOMAIN_ENTRY = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"},
         "minItems": 2, "maxItems": 2},
        {"type": "object",
         "properties": {"kind": {"enum": ["bounded_interval", "real_line"]},
                        "lower": {"type": "number"},
                        "upper": {"type": "number"}},
         "required": ["kind", "lower", "upper"],
         "additionalProperties": False},
    ]
}

_SOLVER_SCHEMA = {
    "type": "object",
    "properties": {
        "alpha_cv": {"type": "number", "exclusiveMinimum": 0},
        "lambda_grid": {
            "type": "object",
            "properties": {"n_grid": {"type": "integer", "minimum": 2},
                           "log_lo": {"type": "number"},
                           "log_hi": {"type": "number"},
                           "refine_iters": {"type": "integer", "minimum": 0}},
            "additionalProperties": False},
        "seeds": {"type": "object",
                  "properties": {"knots": {"type": "integer"}},
                  "additionalProperties": False},
    },
    "additionalProperties": False,
}

FIT_SCHEMA = {
    "type": "object",
    "properties": {
        "preset": {"type": "string"},
        "variable": {"type": "string"},
        "model": {
            "type": "object",
            "properties": {
                "composition": {"enum": list(_COMPOSITIONS)},
                "form": {"type": ["string", "null"]},
                "form_args": {"type": "object"},
                "space": {"enum": list(SPACE_FAMILIES)},
                "domains": {"type": "array", "items": _DOMAIN_ENTRY,
                            "minItems": 1},
                "theta_init": {
                    "oneOf": [{"type": "array", "items": {"type": "number"}},
                              {"type": "null"}, {"const": "auto"}]},
                "column": {"type": "string"},
            },
            "required": ["composition", "space", "domains"],
            "additionalProperties": False,
        },
        "solver": _SOLVER_SCHEMA,
        "output": {"type": "object",
                   "properties": {"grid_points": {"type": "integer",
                                                  "minimum": 8}},
                   "additionalProperties": False},
    },
    "additionalProperties": False,
}

SIMULATE_SCHEMA = {
    "type": "object",
    "properties": {
        "scenario": {
            "type": "object",
            "properties": {
                "id": {"enum": list(SCENARIO_IDS)},
                "param_grid": {"type": "array", "minItems": 1,
                               "items": {"type": "number"}},
                "sample_sizes": {
                    "type": "array", "minItems": 1,
                    "items": {"oneOf": [
                        {"type": "integer", "minimum": 2},
                        {"type": "array", "minItems": 2, "maxItems": 2,
                         "items": {"type": "integer", "minimum": 2}}]}},
                "n_replicates": {"type": "integer", "minimum": 1},
                "base_seed": {"type": "integer"},
                "estimators": {"type": "array", "minItems": 1,
                               "items": {"type": "string"}},
            },
            "required": ["id"],
            "additionalProperties": False,
        },
        "solver": _SOLVER_SCHEMA,
        "workers": {"type": "integer", "minimum": 0},
    },
    "required": ["scenario"],
    "additionalProperties": False,
}

EVALUATE_SCHEMA = {
    "type": "object",
    "properties": {
        "truth": {
            "type": "object",
            "properties": {"type": {"enum": ["uniform", "density_csv"]},
                           "path": {"type": "string"}},
            "required": ["type"],
            "additionalProperties": False},
    },
    "required": ["truth"],
    "additionalProperties": False,
}


def _fail(code: int, message: str):
    click.echo(f"semidens: {message}", err=True)
    sys.exit(code)


def _load_json(path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            loaded = json.load(fh)
    except OSError as exc:
        _fail(2, f"{what} {path}: {exc}")
    except json.JSONDecodeError as exc:
        _fail(2, f"{what} {path}: invalid JSON: {exc}")
    if not isinstance(loaded, dict):
        _fail(2, f"{what} {path}: top level must be a JSON object")
    return loaded


def _validate(cfg: dict, schema: dict, what: str) -> None:
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path)
        _fail(2, f"{what} field {path or '<root>'}: {exc.message}")


# ------------------------------------------------------------------ #
# Presets
# ------------------------------------------------------------------ #

_FAITHFUL_DOMAINS = {"waiting": (40.0, 100.0), "duration": (1.5, 5.5)}


def _faithful_config(variable: str) -> dict:
    lo, hi = _FAITHFUL_DOMAINS[variable]
    return {
        "model": {"composition": "additive", "form": "mixnorm_logdensity",
                  "space": "sobolev2_unit", "domains": [[lo, hi]],
                  "theta_init": "auto", "column": variable},
        "solver": {"alpha_cv": 1.4},
        "output": {"grid_points": 512},
    }


def bundled_faithful_path() -> Path:
    return Path(str(files("semidens").joinpath("data/faithful.csv")))


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def expand_fit_preset(cfg: dict) -> tuple[dict, Path | None]:
    """Resolve a preset name into a full config + default data path."""
    name = cfg.get("preset")
    if name is None:
        return cfg, None
    if name == "faithful":
        variable = cfg.get("variable", "waiting")
    elif name in ("faithful_waiting", "faithful_duration"):
        variable = name.split("_", 1)[1]
    else:
        _fail(2, f"config field preset: unknown preset {name!r}")
    if variable not in _FAITHFUL_DOMAINS:
        _fail(2, f"config field variable: must be one of "
                 f"{sorted(_FAITHFUL_DOMAINS)}")
    overrides = {k: v for k, v in cfg.items() if k not in ("preset", "variable")}
    return _merge(_faithful_config(variable), overrides), bundled_faithful_path()


# ------------------------------------------------------------------ #
# Config -> model
# ------------------------------------------------------------------ #

def _domain_from_entry(entry) -> Domain:
    if isinstance(entry, list):
        lo, hi = float(entry[0]), float(entry[1])
        return Domain("bounded_interval", lo, hi)
    return Domain(entry["kind"], float(entry["lower"]), float(entry["upper"]))


def mixnorm_histogram_init(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Two-normal start: split the data at the coarse-histogram antimode.

    The split point is the lowest bin strictly between the two tallest
    local-maximum bins of a 16-bin histogram; the mixing weight starts at
    the left-mass fraction.  Unimodal histograms fall back to a median
    split, which still gives the optimizer two overlapping components.
    """
    values = np.asarray(values, dtype=float)
    counts, edges = np.histogram(values, bins=16, range=(lo, hi))
    padded = np.concatenate([[-1], counts, [-1]])
    peaks = [i for i in range(counts.size)
             if padded[i + 1] > padded[i] and padded[i + 1] >= padded[i + 2]]
    peaks.sort(key=lambda i: counts[i], reverse=True)
    if len(peaks) >= 2:
        i1, i2 = sorted(peaks[:2])
        if i2 - i1 > 1:
            j = i1 + 1 + int(np.argmin(counts[i1 + 1:i2]))
            split = 0.5 * (edges[j] + edges[j + 1])
        else:
            split = edges[i2]
    else:
        split = float(np.median(values))
    left = values[values <= split]
    right = values[values > split]
    if left.size < 2 or right.size < 2:
        split = float(np.median(values))
        left = values[values <= split]
        right = values[values > split]
    s_floor = 1e-2 * (hi - lo)
    p = np.clip(left.size / values.size, 1e-3, 1.0 - 1e-3)
    return np.array([
        p,
        float(np.mean(left)), max(float(np.std(left, ddof=1)), s_floor),
        float(np.mean(right)), max(float(np.std(right, ddof=1)), s_floor),
    ])


def build_model(model_cfg: dict, data_groups=None) -> ModelSpec:
    """ModelSpec from a validated model config block.

    ``theta_init: "auto"`` asks for the data-driven mixture-normal start
    and therefore needs ``data_groups``.
    """
    form_id = model_cfg.get("form")
    form_args = dict(model_cfg.get("form_args", {}))
    if form_id is None:
        form = make_form("linear_basis", degrees=())
    else:
        form = make_form(form_id, **form_args)

    domains = tuple(_domain_from_entry(e) for e in model_cfg["domains"])
    composition = model_cfg["composition"]
    p = form.p + (1 if composition == "nonlinear" else 0)

    init = model_cfg.get("theta_init")
    if init == "auto":
        if form.id != "mixnorm_logdensity":
            raise ConfigurationError(
                "model.theta_init: \"auto\" is only defined for the "
                "mixnorm_logdensity form")
        if data_groups is None:
            raise ConfigurationError(
                "model.theta_init: \"auto\" needs observed data")
        theta0 = mixnorm_histogram_init(np.concatenate(data_groups),
                                        domains[0].lower, domains[0].upper)
        if composition == "nonlinear":
            theta0 = np.concatenate([[0.5], theta0])
    elif init is None:
        if p != 0:
            raise ConfigurationError(
                f"model.theta_init: required ({p} parameters) for form "
                f"{form.id!r} under composition {composition!r}")
        theta0 = np.empty(0)
    else:
        theta0 = np.asarray(init, dtype=float)
        if theta0.size != p:
            raise ConfigurationError(
                f"model.theta_init: expected {p} values, got {theta0.size}")

    return ModelSpec(len(domains), composition, form,
                     model_cfg["space"], domains, theta0)


def _search_from(solver_cfg: dict) -> SearchConfig | None:
    grid = solver_cfg.get("lambda_grid")
    if grid is None:
        return None
    base = SearchConfig()
    return SearchConfig(grid.get("n_grid", base.n_grid),
                        grid.get("log_lo", base.log_lo),
                        grid.get("log_hi", base.log_hi),
                        grid.get("refine_iters", base.refine_iters))


# ------------------------------------------------------------------ #
# Data ingestion
# ------------------------------------------------------------------ #

def load_data(path, model_cfg: dict, m: int) -> list[np.ndarray]:
    """Observation groups from a headed CSV.

    Two layouts: a `sample,value` file carrying group indices 0..m-1, or a
    plain column file for single-sample models (the column picked by
    model.column when there is more than one).
    """
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigurationError(f"data {path}: {exc}")
    if not rows or not rows[0]:
        raise ConfigurationError(f"data {path}: empty file")
    header = [c.strip() for c in rows[0]]
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]

    def parse(cell, rownum, col):
        try:
            return float(cell)
        except ValueError:
            raise ConfigurationError(
                f"data {path} row {rownum} column {col!r}: "
                f"not a number: {cell!r}")

    if "sample" in header and "value" in header:
        si, vi = header.index("sample"), header.index("value")
        groups: dict[int, list[float]] = {}
        for rn, row in enumerate(body, start=2):
            idx = int(parse(row[si], rn, "sample"))
            groups.setdefault(idx, []).append(parse(row[vi], rn, "value"))
        if sorted(groups) != list(range(m)):
            raise ConfigurationError(
                f"data {path}: sample indices {sorted(groups)} do not match "
                f"the model's {m} domain(s)")
        return [np.asarray(groups[l], dtype=float) for l in range(m)]

    if m != 1:
        raise ConfigurationError(
            f"data {path}: a {m}-sample model needs sample,value layout")
    column = model_cfg.get("column")
    if column is None:
        if len(header) != 1:
            raise ConfigurationError(
                f"data {path}: multiple columns {header}; set model.column")
        ci = 0
    else:
        if column not in header:
            raise ConfigurationError(
                f"model.column: {column!r} not in data columns {header}")
        ci = header.index(column)
    vals = [parse(row[ci], rn, header[ci]) for rn, row in enumerate(body, 2)]
    if not vals:
        raise ConfigurationError(f"data {path}: no observations")
    return [np.asarray(vals, dtype=float)]


# ------------------------------------------------------------------ #
# Fit artifacts
# ------------------------------------------------------------------ #

def _resolved_model_cfg(model_cfg: dict, model: ModelSpec) -> dict:
    return {
        "composition": model.composition,
        "form": None if model.form.id == "linear_basis" and model.form.p == 0
        and model_cfg.get("form") is None else model.form.id,
        "form_args": dict(model_cfg.get("form_args", {})),
        "space": model.space_family,
        "domains": [{"kind": d.kind, "lower": d.lower, "upper": d.upper}
                    for d in model.domains],
        "theta_init": [float(v) for v in model.theta0],
    }


def write_fit_artifact(path, model_cfg, model, fit, alpha, seed, search,
                       grid_points) -> None:
    artifact = {
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "model": _resolved_model_cfg(model_cfg, model),
        "solver": {
            "alpha_cv": alpha,
            "lambda_grid": None if search is None else {
                "n_grid": search.n_grid, "log_lo": search.log_lo,
                "log_hi": search.log_hi, "refine_iters": search.refine_iters},
            "seeds": {"knots": seed},
        },
        "output": {"grid_points": grid_points},
        "theta_hat": [float(v) for v in fit.theta_hat],
        "lambda_hat": float(fit.lambda_hat),
        "h": {"knots": [float(v) for v in fit.h_hat.knots],
              "d": [float(v) for v in fit.h_hat.d],
              "c": [float(v) for v in fit.h_hat.c]},
        "diagnostics": {
            "profile_value": float(fit.profile_value),
            "outer_iterations": int(fit.outer_iterations),
            "converged": bool(fit.converged),
            "lambda_boundary": bool(fit.lambda_boundary),
            "n_outer_evaluations": int(fit.n_outer_evaluations),
            "inner": {
                "iterations": int(fit.inner_diagnostics.iterations),
                "final_objective": float(fit.inner_diagnostics.final_objective),
                "step_halvings": int(fit.inner_diagnostics.step_halvings),
                "converged": bool(fit.inner_diagnostics.converged),
                "gradient_norm": float(fit.inner_diagnostics.gradient_norm),
            },
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(artifact, fh, indent=2)
        fh.write("\n")


def load_fit_artifact(path) -> tuple[ModelSpec, np.ndarray, SplineRep, int]:
    art = _load_json(path, "fit artifact")
    for key in ("model", "theta_hat", "h", "output"):
        if key not in art:
            _fail(2, f"fit artifact {path}: missing field {key}")
    try:
        model = build_model(art["model"])
        space = make_space(model.space_family, model.domains[0])
        h = SplineRep(space, np.asarray(art["h"]["knots"], dtype=float),
                      np.asarray(art["h"]["d"], dtype=float),
                      np.asarray(art["h"]["c"], dtype=float))
        theta = np.asarray(art["theta_hat"], dtype=float)
        grid_points = int(art["output"].get("grid_points", 512))
    except (ConfigurationError, KeyError, TypeError, ValueError) as exc:
        _fail(2, f"fit artifact {path}: {exc}")
    return model, theta, h, grid_points


def run_fit(model: ModelSpec, samples: SampleSet, seed: int, alpha: float,
            search):
    if model.composition == "additive":
        return fit_additive(model, samples, seed=seed, alpha=alpha,
                            search=search)
    if model.composition == "nonlinear":
        return fit_nonlinear(model, samples, seed=seed, alpha=alpha,
                             search=search)
    return fit_transformation(model, samples, seed=seed, alpha=alpha,
                              search=search)


def _prepare_fit(config_path, data_path, seed, alpha):
    """Shared load/validate phase for fit and report; exits 2 on bad input."""
    cfg = _load_json(config_path, "config")
    cfg, default_data = expand_fit_preset(cfg)
    _validate(cfg, FIT_SCHEMA, "config")
    if "model" not in cfg:
        _fail(2, "config field model: required")
    model_cfg = cfg["model"]
    solver_cfg = cfg.get("solver", {})

    source = data_path or default_data
    if source is None:
        _fail(2, "data: no --data given and the config names no preset data")
    try:
        groups = load_data(source, model_cfg, len(model_cfg["domains"]))
        model = build_model(model_cfg, data_groups=groups)
        samples = SampleSet.from_lists(groups)
        samples.validate_domains(model.domains)
    except (ConfigurationError, DegenerateInputError) as exc:
        _fail(2, str(exc))

    use_alpha = alpha if alpha is not None else solver_cfg.get("alpha_cv", 1.4)
    use_seed = seed if seed is not None else solver_cfg.get(
        "seeds", {}).get("knots", 0)
    search = _search_from(solver_cfg)
    grid_points = cfg.get("output", {}).get("grid_points", 512)
    return cfg, model_cfg, model, samples, use_seed, use_alpha, search, grid_points


# ------------------------------------------------------------------ #
# Commands
# ------------------------------------------------------------------ #

@click.group()
def main():
    """Penalized-likelihood estimation of semiparametric density models."""


@main.command("fit")
@click.option("--config", "config_path", required=True,
              type=click.Path(), help="Fit configuration JSON.")
@click.option("--data", "data_path", type=click.Path(),
              help="Observations CSV (defaults to the preset's bundled data).")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Fit artifact JSON; the density CSV lands beside it.")
@click.option("--seed", type=int, default=None, help="Knot-selection seed.")
@click.option("--alpha", type=float, default=None,
              help="Cross-validation alpha (default 1.4).")
def cmd_fit(config_path, data_path, out_path, seed, alpha):
    """Fit one model and write the artifact plus its density grid."""
    (cfg, model_cfg, model, samples, use_seed, use_alpha, search,
     grid_points) = _prepare_fit(config_path, data_path, seed, alpha)
    try:
        fit = run_fit(model, samples, use_seed, use_alpha, search)
    except ConfigurationError as exc:
        _fail(2, str(exc))
    except SemidensError as exc:
        _fail(3, f"estimation failed: {exc}")

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fit_artifact(out, model_cfg, model, fit, use_alpha, use_seed,
                       search, grid_points)
    report_mod.write_density_csv(out.with_name(out.stem + "_density.csv"),
                                 model, fit.theta_hat, fit.h_hat, grid_points)
    click.echo(f"fit written to {out}")


@main.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Scenario configuration JSON.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Table CSV output path.")
@click.option("--full", is_flag=True,
              help="Paper-scale replicate count and sample sizes.")
@click.option("--seed", type=int, default=None, help="Base seed override.")
@click.option("--alpha", type=float, default=None,
              help="Cross-validation alpha (default 1.4).")
def cmd_simulate(config_path, out_path, full, seed, alpha):
    """Run a synthetic scenario and write its table rows."""
    cfg = _load_json(config_path, "config")
    _validate(cfg, SIMULATE_SCHEMA, "config")
    sc_cfg = dict(cfg["scenario"])
    sc_id = sc_cfg.pop("id")
    if "param_grid" in sc_cfg:
        sc_cfg["param_grid"] = tuple(sc_cfg["param_grid"])
    if "sample_sizes" in sc_cfg:
        sc_cfg["sample_sizes"] = tuple(
            tuple(s) if isinstance(s, list) else s
            for s in sc_cfg["sample_sizes"])
    if "estimators" in sc_cfg:
        sc_cfg["estimators"] = tuple(sc_cfg["estimators"])
    if seed is not None:
        sc_cfg["base_seed"] = seed
    use_alpha = alpha if alpha is not None else cfg.get(
        "solver", {}).get("alpha_cv", 1.4)
    try:
        scenario = preset(sc_id, full=full, **sc_cfg)
        rows = run_scenario(scenario, alpha=use_alpha,
                            workers=cfg.get("workers", 0))
    except ConfigurationError as exc:
        _fail(2, str(exc))
    except SemidensError as exc:
        _fail(3, f"simulation failed: {exc}")
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    report_mod.write_table(rows, out)
    click.echo(f"{len(rows)} rows written to {out}")


def _trapezoid_rule(x: np.ndarray) -> QuadratureRule:
    w = np.zeros_like(x)
    w[1:] += 0.5 * np.diff(x)
    w[:-1] += 0.5 * np.diff(x)
    return QuadratureRule(x, w, float(x[0]), float(x[-1]))


@main.command("evaluate")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Truth specification JSON.")
@click.option("--data", "fit_path", required=True, type=click.Path(),
              help="Fit artifact JSON to score.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Report CSV output path.")
def cmd_evaluate(config_path, fit_path, out_path):
    """Score a fit artifact against a named truth (KL and SKL)."""
    cfg = _load_json(config_path, "config")
    _validate(cfg, EVALUATE_SCHEMA, "config")
    truth_cfg = cfg["truth"]
    model, theta, h, grid_points = load_fit_artifact(fit_path)

    kl_total = 0.0
    skl_total: float | None = 0.0
    for l in range(model.m):
        x, f_hat = report_mod.density_on_grid(model, theta, h, l, grid_points)
        rule = _trapezoid_rule(x)
        if truth_cfg["type"] == "uniform":
            f_true = np.full_like(x, 1.0 / (x[-1] - x[0]))
        else:
            path = truth_cfg.get("path")
            if path is None:
                _fail(2, "config field truth.path: required for density_csv")
            f_true = _read_truth_csv(path, l, x)
        with np.errstate(divide="ignore"):
            log_t, log_h = np.log(f_true), np.log(f_hat)
        kl_total += kl(f_true, f_hat, rule)
        if np.all(np.isfinite(log_t)) and np.all(np.isfinite(log_h)):
            skl_total += skl(log_t, log_h, rule)
        else:
            skl_total = None
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    report_mod.write_eval_report(out, kl_total, skl_total)
    click.echo(f"report written to {out}")


def _read_truth_csv(path, l: int, x_grid: np.ndarray) -> np.ndarray:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        _fail(2, f"truth density {path}: {exc}")
    if not rows:
        _fail(2, f"truth density {path}: empty file")
    header = [c.strip() for c in rows[0]]
    try:
        xi, di = header.index("x"), header.index("density")
        si = header.index("sample") if "sample" in header else None
        xs, ds = [], []
        for row in rows[1:]:
            if not row or not any(c.strip() for c in row):
                continue
            if si is not None and int(float(row[si])) != l:
                continue
            xs.append(float(row[xi]))
            ds.append(float(row[di]))
    except (ValueError, IndexError) as exc:
        _fail(2, f"truth density {path}: {exc}")
    xs, ds = np.asarray(xs), np.asarray(ds)
    if xs.size != x_grid.size or np.max(np.abs(xs - x_grid)) > 1e-9:
        _fail(2, f"truth density {path}: grid does not match the fit's "
                 f"sample-{l} domain grid ({xs.size} vs {x_grid.size} points)")
    if np.any(ds < 0):
        _fail(2, f"truth density {path}: negative density values")
    return ds


@main.command("report")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="Fit or scenario configuration JSON.")
@click.option("--data", "data_path", type=click.Path(),
              help="Observations CSV for fit configs.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory for CSVs and figures.")
@click.option("--full", is_flag=True,
              help="Paper-scale scenario when the config is a scenario.")
@click.option("--seed", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.pass_context
def cmd_report(ctx, config_path, data_path, out_dir, full, seed, alpha):
    """Render figures next to the delimited output.

    A scenario config runs the simulation and drops table.csv plus a
    KL-vs-n figure; a fit config (or the faithful preset, which fits both
    variables) drops the artifact, the density CSV, and a density figure
    per fitted variable.
    """
    peek = _load_json(config_path, "config")
    out = Path(out_dir)

    if "scenario" in peek:
        tmp_rows = _report_scenario(ctx, config_path, full, seed, alpha)
        out.mkdir(parents=True, exist_ok=True)
        report_mod.write_table(tmp_rows, out / "table.csv")
        report_mod.render_table_figure(out / "table.png", tmp_rows)
        click.echo(f"table.csv and table.png written to {out}")
        return

    if peek.get("preset") == "faithful" and "variable" not in peek:
        variables = ("waiting", "duration")
        configs = [{**peek, "variable": v} for v in variables]
    else:
        variables = (None,)
        configs = [peek]

    results = []
    for name, sub_cfg in zip(variables, configs):
        cfg_path = Path(config_path)
        if name is not None:
            cfg_path = out / f"_{name}_config.json"
            out.mkdir(parents=True, exist_ok=True)
            with open(cfg_path, "w", encoding="utf-8") as fh:
                json.dump(sub_cfg, fh)
        (cfg, model_cfg, model, samples, use_seed, use_alpha, search,
         grid_points) = _prepare_fit(cfg_path, data_path, seed, alpha)
        if name is not None:
            cfg_path.unlink()
        try:
            fit = run_fit(model, samples, use_seed, use_alpha, search)
        except ConfigurationError as exc:
            _fail(2, str(exc))
        except SemidensError as exc:
            _fail(3, f"estimation failed: {exc}")
        results.append((name or "fit", model_cfg, model, samples, fit,
                        use_alpha, use_seed, search, grid_points))

    out.mkdir(parents=True, exist_ok=True)
    for (name, model_cfg, model, samples, fit, use_alpha, use_seed, search,
         grid_points) in results:
        write_fit_artifact(out / f"{name}.json", model_cfg, model, fit,
                           use_alpha, use_seed, search, grid_points)
        report_mod.write_density_csv(out / f"{name}_density.csv", model,
                                     fit.theta_hat, fit.h_hat, grid_points)
        report_mod.render_density_figure(
            out / f"{name}.png", model, fit.theta_hat, fit.h_hat, samples,
            grid_points, title=name if name != "fit" else None,
            parametric_overlay=model.form.id == "mixnorm_logdensity")
    names = ", ".join(r[0] for r in results)
    click.echo(f"reports for {names} written to {out}")


def _report_scenario(ctx, config_path, full, seed, alpha):
    cfg = _load_json(config_path, "config")
    _validate(cfg, SIMULATE_SCHEMA, "config")
    sc_cfg = dict(cfg["scenario"])
    sc_id = sc_cfg.pop("id")
    if "param_grid" in sc_cfg:
        sc_cfg["param_grid"] = tuple(sc_cfg["param_grid"])
    if "sample_sizes" in sc_cfg:
        sc_cfg["sample_sizes"] = tuple(
            tuple(s) if isinstance(s, list) else s
            for s in sc_cfg["sample_sizes"])
    if "estimators" in sc_cfg:
        sc_cfg["estimators"] = tuple(sc_cfg["estimators"])
    if seed is not None:
        sc_cfg["base_seed"] = seed
    use_alpha = alpha if alpha is not None else cfg.get(
        "solver", {}).get("alpha_cv", 1.4)
    try:
        scenario = preset(sc_id, full=full, **sc_cfg)
        return run_scenario(scenario, alpha=use_alpha,
                            workers=cfg.get("workers", 0))
    except ConfigurationError as exc:
        _fail(2, str(exc))
    except SemidensError as exc:
        _fail(3, f"simulation failed: {exc}")


if __name__ == "__main__":
    main()
