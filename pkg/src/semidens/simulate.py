"""Seeded samplers for the benchmark truths and the replicate-study driver.

A Scenario bundles one synthetic truth family with its parameter grid,
sample sizes, replicate count, and the estimators to run.  ``run_scenario``
executes every (estimator, parameter, size) cell over independent seeded
replicates and aggregates the divergence and parameter-error summaries into
table rows ready for CSV serialization.

Replicates draw their seeds from a counter mix of the scenario base seed,
the cell index, and the replicate index, so any subset of cells can be
rerun bit-identically and replicates can be dispatched in any order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .density import log_density_values
from .errors import ConfigurationError, EstimationError
from .inner import SearchConfig
from .metrics import bias_variance, kernel_baseline, mse_decomposition
from .profile import fit_additive
from .quadrature import QuadratureRule, log_normalizer, make_rule
from .spaces import Domain, ModelSpec, SampleSet, domain_from_data, make_form
from .transform import fit_transformation

log = logging.getLogger(__name__)

SCENARIO_IDS = ("near_normal", "near_gumbel", "weibull_power",
                "two_sample_gumbel", "two_sample_logistic", "faithful")

TWO_SAMPLE_IDS = ("two_sample_gumbel", "two_sample_logistic")

# inverse-CDF sampling grid resolution
_SAMPLING_GRID = 4097

DEFAULT_REPLICATES = 25
FULL_REPLICATES = 100


# ------------------------------------------------------------------ #
# Scenario description
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class Scenario:
    """One truth family with its simulation grid.

    ``param_grid`` carries the departure constant a for the tilted truths
    and the shape exponent for the power-transform truth; the two-sample
    families have no varying parameter and use an empty grid.
    ``sample_sizes`` entries are ints for one-sample families and
    (n1, n2) pairs for two-sample families.
    """

    id: str
    truth: dict = field(default_factory=dict)
    param_grid: tuple = ()
    sample_sizes: tuple = ()
    n_replicates: int = DEFAULT_REPLICATES
    base_seed: int = 0
    estimators: tuple = ("semi",)

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ConfigurationError(f"unknown scenario id {self.id!r}")
        if self.n_replicates < 1:
            raise ConfigurationError("n_replicates must be at least 1")
        for p in self.param_grid:
            if not (np.isfinite(p) and p > 0):
                raise ConfigurationError(f"parameter {p!r} outside catalog range")
        for e in self.estimators:
            if e not in ("semi", "cubic", "quintic", "kernel", "tp"):
                raise ConfigurationError(f"unknown estimator {e!r}")


_PRESETS = {
    "near_normal": dict(
        truth={"mu": 0.5, "sigma": 0.2},
        param_grid=(0.25, 1.0, 4.0),
        sample_sizes=(100, 200, 500),
        estimators=("semi", "quintic", "cubic", "kernel")),
    "near_gumbel": dict(
        truth={"mu": 0.5, "sigma": 0.2},
        param_grid=(0.25, 1.0, 4.0),
        sample_sizes=(100, 200, 500),
        estimators=("semi", "cubic", "kernel")),
    "weibull_power": dict(
        truth={"scale": 1.0},
        param_grid=(1.0, 2.0, 3.0),
        sample_sizes=(100, 200),
        estimators=("semi", "cubic")),
    "two_sample_gumbel": dict(
        truth={"mu": 2.0, "sigma": 1.0},
        param_grid=(),
        sample_sizes=((100, 100), (100, 200), (200, 100), (200, 200)),
        estimators=("semi", "tp")),
    "two_sample_logistic": dict(
        truth={"mu": 2.0, "sigma": 1.0},
        param_grid=(),
        sample_sizes=((100, 100), (100, 200), (200, 100), (200, 200)),
        estimators=("semi", "tp")),
}


def preset(scenario_id: str, full: bool = False, **overrides) -> Scenario:
    """Cataloged scenario with its benchmark defaults.

    ``full`` switches to the 100-replicate study; individual fields can be
    overridden, e.g. a reduced ``sample_sizes`` tuple for smoke runs.
    """
    if scenario_id not in _PRESETS:
        raise ConfigurationError(
            f"no synthetic preset for scenario {scenario_id!r}")
    kw = dict(_PRESETS[scenario_id])
    kw["n_replicates"] = FULL_REPLICATES if full else DEFAULT_REPLICATES
    kw.update(overrides)
    return Scenario(scenario_id, **kw)


@dataclass(frozen=True)
class Cell:
    """One (parameter, sample sizes) setting of a scenario."""

    param: float | None
    sizes: tuple[int, ...]


def cells_of(scenario: Scenario) -> list[Cell]:
    if scenario.id in TWO_SAMPLE_IDS:
        return [Cell(None, tuple(int(n) for n in pair))
                for pair in scenario.sample_sizes]
    return [Cell(float(p), (int(n),))
            for p in scenario.param_grid for n in scenario.sample_sizes]


# ------------------------------------------------------------------ #
# Generic inverse-CDF sampler
# ------------------------------------------------------------------ #

def sample_density(log_density: Callable, domain: Domain, n: int,
                   seed) -> np.ndarray:
    """Draw n points from exp(log_density) restricted to ``domain``.

    Inversion runs on a fixed fine grid with the trapezoid CDF and monotone
    linear interpolation, so draws are deterministic per seed and need no
    closed-form quantile function.
    """
    grid = np.linspace(domain.lower, domain.upper, _SAMPLING_GRID)
    ld = np.asarray(log_density(grid), dtype=float)
    if not np.all(np.isfinite(ld)):
        raise ConfigurationError("log-density not finite on the sampling grid")
    f = np.exp(ld - np.max(ld))
    cdf = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1])
                                           * 0.5 * np.diff(grid))])
    cdf /= cdf[-1]
    u = np.random.default_rng(seed).random(int(n))
    return np.interp(u, cdf, grid)


# ------------------------------------------------------------------ #
# Truth catalog
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class CellTruth:
    """Everything a replicate needs about one cell's true model.

    ``draw`` maps (seed, sample index, n) to observations.  ``f_true_rows``
    are the true densities renormalized on the evaluation rules, which for
    unbounded truths means restriction to a wide fixed window.
    """

    eval_rules: tuple[QuadratureRule, ...]
    f_true_rows: tuple[np.ndarray, ...]
    draw: Callable[[object, int, int], np.ndarray]
    theta_truth: np.ndarray | None = None


def _normalized_on(rule: QuadratureRule, log_density: Callable) -> np.ndarray:
    ld = np.asarray(log_density(rule.nodes), dtype=float)
    return np.exp(ld - log_normalizer(rule, ld))


def _tilted_truth(alpha: Callable, a: float) -> Callable:
    def ld(x):
        x = np.asarray(x, dtype=float)
        return alpha(x) + a * x ** 3
    return ld


def _truth_near_normal(scenario: Scenario, cell: Cell) -> CellTruth:
    mu, sig = scenario.truth["mu"], scenario.truth["sigma"]
    dom = Domain("bounded_interval", 0.0, 1.0)

    def alpha(x):
        return -x * x / (2 * sig * sig) + mu * x / (sig * sig)

    ld = _tilted_truth(alpha, cell.param)
    rule = make_rule(dom)

    def draw(seed, l, n):
        return sample_density(ld, dom, n, seed)

    return CellTruth((rule,), (_normalized_on(rule, ld),), draw)


def _truth_near_gumbel(scenario: Scenario, cell: Cell) -> CellTruth:
    mu, sig = scenario.truth["mu"], scenario.truth["sigma"]
    dom = Domain("bounded_interval", 0.0, 1.0)

    def alpha(x):
        z = (np.asarray(x, dtype=float) - mu) / sig
        return -z - np.exp(-z)

    ld = _tilted_truth(alpha, cell.param)
    rule = make_rule(dom)

    def draw(seed, l, n):
        return sample_density(ld, dom, n, seed)

    return CellTruth((rule,), (_normalized_on(rule, ld),), draw)


def _truth_weibull(scenario: Scenario, cell: Cell) -> CellTruth:
    s = scenario.truth["scale"]
    gam = cell.param
    dom = Domain("bounded_interval", 0.0, 1.0)
    rule = make_rule(dom)

    def log_f(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return (np.log(gam / s) + (gam - 1) * np.log(x / s)
                    - (x / s) ** gam)

    # draw on the exponential scale, where the log-density stays finite,
    # then invert the power map
    def log_f_exp(y):
        return -np.asarray(y, dtype=float) / s ** gam

    def draw(seed, l, n):
        y = sample_density(log_f_exp, dom, n, seed)
        return y ** (1.0 / gam)

    return CellTruth((rule,), (_normalized_on(rule, log_f),), draw,
                     theta_truth=np.array([gam]))


def _gumbel_log_density(mu, sig):
    def ld(x):
        z = (np.asarray(x, dtype=float) - mu) / sig
        return -z - np.exp(-z)
    return ld


def _logistic_log_density(mu, sig):
    def ld(x):
        z = (np.asarray(x, dtype=float) - mu) / sig
        return -z - 2.0 * np.log1p(np.exp(-z))
    return ld


def _truth_two_sample(scenario: Scenario, cell: Cell) -> CellTruth:
    mu, sig = scenario.truth["mu"], scenario.truth["sigma"]
    if scenario.id == "two_sample_gumbel":
        maker, lo_w, hi_w = _gumbel_log_density, 4.0, 14.0
    else:
        maker, lo_w, hi_w = _logistic_log_density, 13.0, 13.0
    lds = (maker(0.0, 1.0), maker(mu, sig))
    windows = (Domain("real_line", -lo_w, hi_w),
               Domain("real_line", mu - lo_w * sig, mu + hi_w * sig))
    rules = tuple(make_rule(w) for w in windows)

    def draw(seed, l, n):
        return sample_density(lds[l], windows[l], n, seed)

    return CellTruth(rules, tuple(_normalized_on(r, ld)
                                  for r, ld in zip(rules, lds)),
                     draw, theta_truth=np.array([mu, sig]))


_TRUTHS = {
    "near_normal": _truth_near_normal,
    "near_gumbel": _truth_near_gumbel,
    "weibull_power": _truth_weibull,
    "two_sample_gumbel": _truth_two_sample,
    "two_sample_logistic": _truth_two_sample,
}


# ------------------------------------------------------------------ #
# Estimators
# ------------------------------------------------------------------ #

@dataclass
class ReplicateEstimate:
    """Per-replicate output: fitted log-densities and parameter estimates."""

    log_f_rows: tuple[np.ndarray, ...]
    theta_hat: np.ndarray | None = None
    log_f_shape: np.ndarray | None = None


def _moment_init(form, sample: np.ndarray) -> np.ndarray:
    est = np.array([float(np.mean(sample)), float(np.std(sample, ddof=1))])
    return np.clip(est, form.theta_lower, form.theta_upper)


_EULER_GAMMA = 0.5772156649015329


def _gumbel_moment_init(form, sample: np.ndarray) -> np.ndarray:
    # method-of-moments for the untruncated extreme-value family
    sd = float(np.std(sample, ddof=1))
    sig = sd * np.sqrt(6.0) / np.pi
    mu = float(np.mean(sample)) - _EULER_GAMMA * sig
    return np.clip(np.array([mu, sig]), form.theta_lower, form.theta_upper)


def _nonparametric_log_f(group: np.ndarray, domain: Domain, family: str,
                         eval_rule: QuadratureRule, seed: int,
                         alpha: float, search) -> np.ndarray:
    form = make_form("linear_basis", degrees=())
    model = ModelSpec(1, "additive", form, family, (domain,), np.empty(0))
    fit = fit_additive(model, SampleSet.from_lists([group]), seed=seed,
                       alpha=alpha, search=search)
    return log_density_values(model, fit.theta_hat, fit.h_hat, eval_rule)


def _fit_semi(scenario, cell, truth, samples, seed, alpha, search):
    if scenario.id == "near_normal":
        form = make_form("truncnorm_logit")
        model = ModelSpec(1, "additive", form, "sobolev3_unit",
                          (Domain("bounded_interval", 0.0, 1.0),),
                          _moment_init(form, samples.groups[0]))
        fit = fit_additive(model, samples, seed=seed, alpha=alpha, search=search)
    elif scenario.id == "near_gumbel":
        form = make_form("gumbel_logit")
        model = ModelSpec(1, "additive", form, "sobolev2_kernel",
                          (Domain("bounded_interval", 0.0, 1.0),),
                          _gumbel_moment_init(form, samples.groups[0]))
        fit = fit_additive(model, samples, seed=seed, alpha=alpha, search=search)
    elif scenario.id == "weibull_power":
        form = make_form("power_transform")
        model = ModelSpec(1, "transformation", form, "sobolev2_unit",
                          (Domain("bounded_interval", 0.0, 1.0),),
                          np.array([1.0]))
        fit = fit_transformation(model, samples, seed=seed, alpha=alpha,
                                 search=search)
    else:
        form = make_form("location_scale")
        doms = tuple(domain_from_data(g) for g in samples.groups)
        model = ModelSpec(2, "transformation", form, "thinplate_real",
                          doms, np.array([0.0, 1.0]))
        fit = fit_transformation(model, samples, seed=seed, alpha=alpha,
                                 search=search)

    rows = tuple(log_density_values(model, fit.theta_hat, fit.h_hat,
                                    truth.eval_rules[l], l=l)
                 for l in range(model.m))
    shape = None
    if scenario.id in TWO_SAMPLE_IDS:
        eta = fit.h_hat(truth.eval_rules[0].nodes)
        shape = eta - log_normalizer(truth.eval_rules[0], eta)
    return ReplicateEstimate(rows, np.asarray(fit.theta_hat, dtype=float),
                             shape)


def _fit_baseline(name, scenario, cell, truth, samples, seed, alpha, search):
    if name == "kernel":
        return ReplicateEstimate(tuple(
            np.log(kernel_baseline(g, r))
            for g, r in zip(samples.groups, truth.eval_rules)))
    if name == "tp":
        rows = tuple(
            _nonparametric_log_f(g, domain_from_data(g), "thinplate_real",
                                 truth.eval_rules[l], seed, alpha, search)
            for l, g in enumerate(samples.groups))
        return ReplicateEstimate(rows)
    if name == "quintic":
        # the order-3 kernel space here excludes {x, x^2}, so the full
        # polynomial-spline family needs them back as free coefficients
        rows = []
        for l, g in enumerate(samples.groups):
            form = make_form("linear_basis", degrees=(1, 2))
            model = ModelSpec(1, "additive", form, "sobolev3_unit",
                              (Domain("bounded_interval", 0.0, 1.0),),
                              np.zeros(2))
            fit = fit_additive(model, SampleSet.from_lists([g]), seed=seed,
                               alpha=alpha, search=search)
            rows.append(log_density_values(model, fit.theta_hat, fit.h_hat,
                                           truth.eval_rules[l]))
        return ReplicateEstimate(tuple(rows))
    rows = tuple(
        _nonparametric_log_f(g, Domain("bounded_interval", 0.0, 1.0),
                             "sobolev2_unit", truth.eval_rules[l], seed,
                             alpha, search)
        for l, g in enumerate(samples.groups))
    return ReplicateEstimate(rows)


def run_replicate(scenario: Scenario, cell_index: int, rep_index: int,
                  estimator: str, alpha: float = 1.4,
                  search: SearchConfig | None = None) -> ReplicateEstimate:
    """Fit one estimator on one freshly drawn replicate of one cell."""
    cell = cells_of(scenario)[cell_index]
    truth = _TRUTHS[scenario.id](scenario, cell)
    groups = [truth.draw([scenario.base_seed, cell_index, rep_index, l],
                         l, n)
              for l, n in enumerate(cell.sizes)]
    samples = SampleSet.from_lists(
        groups, seed_tag=f"{scenario.base_seed}:{cell_index}:{rep_index}")
    fit_seed = (scenario.base_seed * 1_000_003
                + cell_index * 8191 + rep_index)
    if estimator == "semi":
        return _fit_semi(scenario, cell, truth, samples, fit_seed,
                         alpha, search)
    return _fit_baseline(estimator, scenario, cell, truth, samples,
                         fit_seed, alpha, search)


# ------------------------------------------------------------------ #
# Scenario driver
# ------------------------------------------------------------------ #

def _sum_decompositions(parts):
    # mean KL of a sum of per-sample divergences decomposes additively
    return (sum(p.bias for p in parts), sum(p.variance for p in parts),
            sum(p.mean_kl for p in parts), sum(p.n_excluded for p in parts))


def _aggregate_cell(scenario, cell, truth, estimates) -> dict:
    n_ok = len(estimates)
    row = {
        "scenario": scenario.id,
        "estimator": None,
        "truth_param": cell.param,
        "n1": cell.sizes[0],
        "n2": cell.sizes[1] if len(cell.sizes) > 1 else None,
        "n_replicates": scenario.n_replicates,
        "n_failed": scenario.n_replicates - n_ok,
        "kl_mean": None, "kl_bias": None, "kl_variance": None,
        "kls_mean": None, "kls_bias": None, "kls_variance": None,
        "mse_p1": None, "mse_p1_bias_sq": None, "mse_p1_variance": None,
        "mse_p2": None, "mse_p2_bias_sq": None, "mse_p2_variance": None,
    }
    m = len(truth.eval_rules)
    if n_ok >= 2:
        parts = [bias_variance([e.log_f_rows[l] for e in estimates],
                               truth.f_true_rows[l], truth.eval_rules[l])
                 for l in range(m)]
        b, v, mk, _ = _sum_decompositions(parts)
        row.update(kl_mean=mk, kl_bias=b, kl_variance=v)
    else:
        from .metrics import kl
        row["kl_mean"] = sum(
            kl(truth.f_true_rows[l], np.exp(estimates[0].log_f_rows[l]),
               truth.eval_rules[l]) for l in range(m))

    shapes = [e.log_f_shape for e in estimates if e.log_f_shape is not None]
    if len(shapes) >= 2:
        bv = bias_variance(shapes, truth.f_true_rows[0], truth.eval_rules[0])
        row.update(kls_mean=bv.mean_kl, kls_bias=bv.bias,
                   kls_variance=bv.variance)

    thetas = [e.theta_hat for e in estimates if e.theta_hat is not None]
    if thetas and truth.theta_truth is not None and len(thetas) >= 2:
        dec = mse_decomposition(np.vstack(thetas), truth.theta_truth)
        for j, d in enumerate(dec[:2]):
            row[f"mse_p{j + 1}"] = d.mse
            row[f"mse_p{j + 1}_bias_sq"] = d.bias_sq
            row[f"mse_p{j + 1}_variance"] = d.variance
    return row


def _replicate_task(args):
    scenario, cell_index, rep_index, estimator, alpha = args
    try:
        return run_replicate(scenario, cell_index, rep_index, estimator,
                             alpha)
    except Exception as exc:  # collected and re-raised by the driver
        return (f"{scenario.id} cell={cell_index} rep={rep_index} "
                f"estimator={estimator}: {type(exc).__name__}: {exc}")


def run_scenario(scenario: Scenario, alpha: float = 1.4,
                 workers: int = 0) -> list[dict]:
    """Run every cell of a synthetic scenario and return table rows.

    One row per (estimator, parameter, sizes) in deterministic order.  A
    cell tolerates isolated replicate failures; more than 10% failures for
    any estimator aborts the scenario with the collected failure log.
    ``workers`` > 0 dispatches replicates to a process pool; results do not
    depend on scheduling because every replicate reseeds from its indices.
    """
    if scenario.id == "faithful":
        raise ConfigurationError(
            "the observed-data scenario has no synthetic truth; "
            "run it through the fit/report commands")
    cells = cells_of(scenario)
    tasks = [(scenario, ci, r, est, alpha)
             for ci in range(len(cells))
             for est in scenario.estimators
             for r in range(scenario.n_replicates)]
    if workers > 0:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate_task, tasks, chunksize=1))
    else:
        outcomes = [_replicate_task(t) for t in tasks]

    rows = []
    failures = [o for o in outcomes if isinstance(o, str)]
    idx = 0
    by_key = {}
    for ci in range(len(cells)):
        for est in scenario.estimators:
            chunk = outcomes[idx:idx + scenario.n_replicates]
            idx += scenario.n_replicates
            by_key[(ci, est)] = [c for c in chunk
                                 if isinstance(c, ReplicateEstimate)]
    if len(failures) > 0:
        for line in failures:
            log.error("replicate failure: %s", line)
    for (ci, est), ok in by_key.items():
        n_fail = scenario.n_replicates - len(ok)
        if n_fail > 0.1 * scenario.n_replicates:
            raise EstimationError(
                f"{n_fail}/{scenario.n_replicates} replicates failed for "
                f"estimator {est!r} in cell {ci}; log:\n" + "\n".join(failures))
    for ci, cell in enumerate(cells):
        truth = _TRUTHS[scenario.id](scenario, cell)
        for est in scenario.estimators:
            row = _aggregate_cell(scenario, cell, truth, by_key[(ci, est)])
            row["estimator"] = est
            rows.append(row)
    return rows
