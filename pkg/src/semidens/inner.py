"""Inner solver: penalized-likelihood Newton iteration over spline coefficients.

The estimator represents h(x) = psi(x)' d + sum_j c_j R(Z_j, x) and, for a
fixed smoothing parameter, minimizes

    sum_l { -mean_i[B_l(X_li) beta] + log int w_l exp(B_l(x) beta) dx }
        + (lam/2) c' Q c

over beta = (d, c), where B_l collects the basis values each sample sees.
Different model compositions differ only in how they build the per-sample
design (which points the basis is evaluated at, whether values are scaled
by a derivative weight, and what enters the log-weight at the nodes), so
additive, linearized-nonlinear, and transformation fits all funnel through
the same Newton engine, cross-validation score, and lambda search.

The objective is convex in beta (log-sum-exp of affine maps plus a convex
quadratic), so Newton with step halving is globally reliable; the Hessian
at the solution is reused by the cross-validation trace term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (ConfigurationError, DegenerateInputError, EstimationError,
                     NumericalError)
from .optim import golden_section
from .quadrature import QuadratureRule, make_rule
from .spaces import Domain, RkhsSpace, SampleSet, penalty_gram

GRAD_TOL = 1e-6
OBJ_REL_TOL = 1e-7
MAX_ITER = 30
MAX_HALVINGS = 10
JITTER_SCALE = 1e-10


# ------------------------------------------------------------------ #
# Knots and basis matrices
# ------------------------------------------------------------------ #

def default_knot_count(n_total: int) -> int:
    """q = min(N, max(30, ceil(10 N^{2/9}))), the usual spline-knot budget."""
    return int(min(n_total, max(30, np.ceil(10.0 * n_total ** (2.0 / 9.0)))))


def choose_knots(samples, q_target: int, seed: int) -> np.ndarray:
    """Draw ``q_target`` knots from the pooled observations, without replacement.

    Pooling sorts and deduplicates first, so the draw is invariant to both
    group order and within-group permutation.  If ties leave fewer than
    ``q_target`` distinct values, all distinct values are used.
    """
    if isinstance(samples, SampleSet):
        pooled = samples.pooled()
        total = samples.total
    else:
        pooled = np.concatenate([np.asarray(g, dtype=float) for g in samples])
        total = pooled.size
    if q_target > total:
        raise ConfigurationError(
            f"q_target={q_target} exceeds the {total} pooled observations")
    distinct = np.unique(pooled)
    q = min(q_target, distinct.size)
    idx = np.random.default_rng(seed).choice(distinct.size, size=q, replace=False)
    return np.sort(distinct[idx])


def basis_matrix(space: RkhsSpace, knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(n, k+q) matrix [psi(x_i), R(Z_j, x_i)] for the representer expansion."""
    x = np.asarray(x, dtype=float)
    return np.hstack([space.psi(x), space.rk(knots[None, :], x[:, None])])


def stabilized_gram(space: RkhsSpace, knots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Penalty Gram Q and its jittered copy used inside the solver.

    The jitter 1e-10 tr(Q)/q keeps the penalized system factorable when Q
    has near-null directions (thin-plate knots near the anchors, tight knot
    clusters).  All solver-side objectives and reported penalties use the
    jittered matrix, consistently.
    """
    q_raw = penalty_gram(space, knots)
    q = q_raw.shape[0]
    jitter = JITTER_SCALE * np.trace(q_raw) / q
    return q_raw, q_raw + jitter * np.eye(q)


@dataclass(frozen=True)
class SplineRep:
    """Fitted function h(x) = psi(x)' d + sum_j c_j R(Z_j, x)."""

    space: RkhsSpace
    knots: np.ndarray
    d: np.ndarray
    c: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return basis_matrix(self.space, self.knots, x) @ self.beta

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([self.d, self.c])

    def penalty(self, qmat: np.ndarray) -> float:
        """Roughness J(h) = c' Q c for a given penalty Gram matrix."""
        return float(self.c @ qmat @ self.c)


@dataclass(frozen=True)
class NewtonDiagnostics:
    iterations: int
    final_objective: float
    step_halvings: int
    converged: bool
    gradient_norm: float


# ------------------------------------------------------------------ #
# Per-sample designs
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class SampleDesign:
    """Everything one sample contributes to the inner objective.

    ``b_nodes`` holds basis values at the quadrature nodes, ``b_data`` at
    the observations; ``log_w_nodes`` is the log of the weight w_l at the
    nodes (None means w == 1).  ``data_offset_mean`` is the average of the
    eta-offset at the observations; it is constant in beta and excluded
    from the solver objective, but the cross-validation score adds it back
    so the score is the genuine negative log likelihood.
    """

    rule: QuadratureRule
    b_nodes: np.ndarray
    b_data: np.ndarray
    n_obs: int
    log_w_nodes: np.ndarray | None = None
    data_offset_mean: float = 0.0
    col_mean: np.ndarray = field(default=None, repr=False)
    centered_gram: np.ndarray = field(default=None, repr=False)


def make_design(rule, b_nodes, b_data, log_w_nodes=None, data_offset_mean=0.0):
    b_data = np.asarray(b_data, dtype=float)
    centered = b_data - b_data.mean(axis=0)
    return SampleDesign(rule, np.asarray(b_nodes, dtype=float), b_data,
                        b_data.shape[0], log_w_nodes, float(data_offset_mean),
                        b_data.mean(axis=0), centered.T @ centered)


def additive_designs(space, knots, samples, weights, rules=None):
    """Designs for eta_l = h with sample weight w_l in the integral.

    ``weights`` is a sequence of callables w_l (None entries mean w == 1);
    they must be strictly positive on the quadrature nodes.
    """
    groups = samples.groups if isinstance(samples, SampleSet) else [
        np.asarray(g, dtype=float) for g in samples]
    if rules is None:
        kind = "real_line" if space.family == "thinplate_real" else "bounded_interval"
        rules = [make_rule(Domain(kind, space.lower, space.upper))] * len(groups)
    designs = []
    for l, g in enumerate(groups):
        rule = rules[l]
        w_fn = None if weights is None else weights[l]
        if w_fn is None:
            log_w = None
        else:
            w_vals = np.asarray(w_fn(rule.nodes), dtype=float)
            if np.any(w_vals <= 0) or not np.all(np.isfinite(w_vals)):
                raise DegenerateInputError(
                    f"weight function for sample {l} is not strictly positive/finite "
                    "on the quadrature nodes")
            log_w = np.log(w_vals)
        designs.append(make_design(rule, basis_matrix(space, knots, rule.nodes),
                                   basis_matrix(space, knots, g), log_w))
    return designs


# ------------------------------------------------------------------ #
# Newton engine
# ------------------------------------------------------------------ #

@dataclass
class InnerState:
    """Converged (or best-effort) solver state at one lambda."""

    beta: np.ndarray
    objective: float
    nll: float
    hessian: np.ndarray
    cho: tuple
    diagnostics: NewtonDiagnostics


def _sample_pass(design, beta):
    """(log-normalizer, node masses) for one sample at coefficients beta."""
    z = design.b_nodes @ beta
    if design.log_w_nodes is not None:
        z = z + design.log_w_nodes
    top = np.max(z)
    if not np.isfinite(top):
        raise DegenerateInputError("degenerate log-integrand in inner objective")
    e = np.exp(z - top)
    raw = design.rule.weights * e
    s = raw.sum()
    if s <= 0.0 or not np.isfinite(s):
        raise DegenerateInputError("normalizer underflowed in inner objective")
    return top + np.log(s), raw / s


def _penalty_apply(beta, qmat_fit, k):
    out = np.zeros_like(beta)
    out[k:] = qmat_fit @ beta[k:]
    return out


def _objective_only(designs, beta, qmat_fit, lam, k):
    val = 0.5 * lam * float(beta[k:] @ qmat_fit @ beta[k:])
    for dsn in designs:
        lognorm, _ = _sample_pass(dsn, beta)
        val += lognorm - float(dsn.col_mean @ beta)
    return val


def _factor_spd(h):
    base = max(np.trace(h) / h.shape[0], 1.0) * 1e-14
    for j in range(7):
        try:
            return cho_factor(h + (base * 10.0 ** j) * np.eye(h.shape[0]) if j else h,
                              lower=True)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"Newton system singular after jitter escalation (cond ~ {np.linalg.cond(h):.2e})")


def fit_designs(designs, qmat_fit, lam, start=None) -> InnerState:
    """Minimize the penalized objective over beta by damped Newton.

    Accepted steps never increase the objective; the loop stops on a small
    gradient (converged), a tiny relative objective change, or MAX_ITER.
    The returned state carries the Hessian (with its Cholesky factor) at
    the final coefficients for reuse by the cross-validation score.
    """
    dim = designs[0].b_nodes.shape[1]
    k = dim - qmat_fit.shape[0]
    beta = np.zeros(dim) if start is None else np.asarray(start, dtype=float).copy()

    total_halvings = 0
    n_steps = 0
    obj = _objective_only(designs, beta, qmat_fit, lam, k)

    for _ in range(MAX_ITER):
        grad = lam * _penalty_apply(beta, qmat_fit, k)
        hess = np.zeros((dim, dim))
        hess[k:, k:] = lam * qmat_fit
        for dsn in designs:
            _, p = _sample_pass(dsn, beta)
            mu_vec = p @ dsn.b_nodes
            grad += mu_vec - dsn.col_mean
            hess += (dsn.b_nodes.T * p) @ dsn.b_nodes - np.outer(mu_vec, mu_vec)
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= GRAD_TOL:
            break

        delta = cho_solve(_factor_spd(hess), -grad)
        step = 1.0
        new_beta, new_obj = beta, obj
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + step * delta
            cand_obj = _objective_only(designs, cand, qmat_fit, lam, k)
            if cand_obj <= obj:
                new_beta, new_obj = cand, cand_obj
                break
            step *= 0.5
            total_halvings += 1
        else:
            break  # no descent possible along the Newton direction

        small_change = abs(new_obj - obj) <= OBJ_REL_TOL * (1.0 + abs(obj))
        beta, obj = new_beta, new_obj
        n_steps += 1
        if small_change:
            break

    # final consistent pass: gradient, Hessian, and likelihood at the result
    grad = lam * _penalty_apply(beta, qmat_fit, k)
    hess = np.zeros((dim, dim))
    hess[k:, k:] = lam * qmat_fit
    nll = 0.0
    for dsn in designs:
        lognorm, p = _sample_pass(dsn, beta)
        mu_vec = p @ dsn.b_nodes
        grad += mu_vec - dsn.col_mean
        hess += (dsn.b_nodes.T * p) @ dsn.b_nodes - np.outer(mu_vec, mu_vec)
        nll += lognorm - float(dsn.col_mean @ beta) - dsn.data_offset_mean
    grad_norm = float(np.max(np.abs(grad)))
    converged = grad_norm <= GRAD_TOL
    obj = _objective_only(designs, beta, qmat_fit, lam, k)

    diag = NewtonDiagnostics(n_steps, obj, total_halvings, converged, grad_norm)
    return InnerState(beta, obj, nll, hess, _factor_spd(hess), diag)


def newton_step(rep_tilde: SplineRep, samples, weights, lam: float,
                qmat_fit: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One undamped Newton update of (d, c) from the current representer.

    Assembles the same symmetric system the iteration uses (moment vectors
    on the left, averaged basis values and covariances on the right) and
    solves it once.
    """
    if lam <= 0:
        raise ConfigurationError("newton_step requires lam > 0")
    space, knots = rep_tilde.space, rep_tilde.knots
    if qmat_fit is None:
        _, qmat_fit = stabilized_gram(space, knots)
    designs = additive_designs(space, knots, samples, weights)
    dim = designs[0].b_nodes.shape[1]
    k = dim - qmat_fit.shape[0]
    beta = rep_tilde.beta

    grad = lam * _penalty_apply(beta, qmat_fit, k)
    hess = np.zeros((dim, dim))
    hess[k:, k:] = lam * qmat_fit
    for dsn in designs:
        _, p = _sample_pass(dsn, beta)
        mu_vec = p @ dsn.b_nodes
        grad += mu_vec - dsn.col_mean
        hess += (dsn.b_nodes.T * p) @ dsn.b_nodes - np.outer(mu_vec, mu_vec)
    new_beta = beta + cho_solve(_factor_spd(hess), -grad)
    return new_beta[:k].copy(), new_beta[k:].copy()


# ------------------------------------------------------------------ #
# Cross-validation score
# ------------------------------------------------------------------ #

def cv_score_state(state: InnerState, designs, alpha: float) -> float:
    """CV criterion: negative log likelihood plus the alpha-scaled trace term.

    The trace for sample l is tr(P1_perp B_l H^{-1} B_l' P1_perp) with
    P1_perp the centering projection, divided by n_l (n_l - 1); H is the
    penalized Hessian at the fitted coefficients, exactly as the Newton
    iteration assembled it.
    """
    score = state.nll
    for dsn in designs:
        tr = float(np.trace(cho_solve(state.cho, dsn.centered_gram)))
        score += alpha * tr / (dsn.n_obs * (dsn.n_obs - 1))
    return score


def cv_score(fit: SplineRep, samples, weights, lam: float, alpha: float = 1.4) -> float:
    """CV score of an already-fitted representer under additive weights."""
    _, qmat_fit = stabilized_gram(fit.space, fit.knots)
    designs = additive_designs(fit.space, fit.knots, samples, weights)
    state = fit_designs(designs, qmat_fit, lam, start=fit.beta)
    return cv_score_state(state, designs, alpha)


# ------------------------------------------------------------------ #
# Smoothing-parameter selection
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class SearchConfig:
    """Lambda search: grid on log10(N lam), then golden-section refinement."""

    n_grid: int = 40
    log_lo: float = -6.0
    log_hi: float = 2.0
    refine_iters: int = 15


@dataclass
class SelectionResult:
    lam: float
    state: InnerState
    score: float
    boundary: bool
    n_failed: int
    lam_grid: np.ndarray
    j_grid: np.ndarray
    rep: SplineRep | None = None


def select_lambda_designs(designs, qmat_fit, n_total, alpha=1.4,
                          search: SearchConfig | None = None) -> SelectionResult:
    """Pick lambda minimizing the CV score over the grid plus refinement.

    The grid is walked from the largest lambda down, warm-starting each fit
    from the previous grid point's coefficients; no state leaks in from
    earlier calls, so the selection is a pure function of the designs.
    Ties break toward larger lambda; a minimum at the grid edge is returned
    as-is with ``boundary=True`` and no refinement.
    """
    search = search or SearchConfig()
    k = designs[0].b_nodes.shape[1] - qmat_fit.shape[0]
    t_grid = np.linspace(search.log_hi, search.log_lo, search.n_grid)
    lam_grid = 10.0 ** t_grid / n_total

    states: list[InnerState | None] = []
    scores = np.full(search.n_grid, np.inf)
    j_vals = np.full(search.n_grid, np.nan)
    prev_beta = None
    n_failed = 0
    for i, lam in enumerate(lam_grid):
        try:
            st = fit_designs(designs, qmat_fit, lam, start=prev_beta)
        except (DegenerateInputError, NumericalError):
            states.append(None)
            n_failed += 1
            continue
        states.append(st)
        prev_beta = st.beta
        scores[i] = cv_score_state(st, designs, alpha)
        j_vals[i] = float(st.beta[k:] @ qmat_fit @ st.beta[k:])
    if all(s is None for s in states):
        raise EstimationError("every candidate lambda fit failed")

    best = int(np.argmin(scores))  # first minimum = largest lambda on ties
    best_lam, best_state, best_score = lam_grid[best], states[best], scores[best]
    boundary = best in (0, search.n_grid - 1)

    if not boundary and search.refine_iters > 0:
        cache = {}

        def probe(t):
            lam = 10.0 ** t / n_total
            try:
                st = fit_designs(designs, qmat_fit, lam, start=best_state.beta)
            except (DegenerateInputError, NumericalError):
                return np.inf
            sc = cv_score_state(st, designs, alpha)
            cache[t] = (lam, st, sc)
            return sc

        t_best, f_best = golden_section(probe, t_grid[best + 1], t_grid[best - 1],
                                        n_iter=search.refine_iters)
        if t_best in cache:
            ref_lam, ref_state, ref_score = cache[t_best]
            if ref_score < best_score or (ref_score == best_score and ref_lam > best_lam):
                best_lam, best_state, best_score = ref_lam, ref_state, ref_score

    return SelectionResult(best_lam, best_state, best_score, boundary,
                           n_failed, lam_grid, j_vals)


def select_lambda(space: RkhsSpace, samples, weights, alpha: float = 1.4,
                  search: SearchConfig | None = None, seed: int = 0,
                  knots: np.ndarray | None = None) -> SelectionResult:
    """Spec surface for additive-weight models: builds designs, selects lambda,
    and attaches the chosen SplineRep to the result."""
    sset = samples if isinstance(samples, SampleSet) else SampleSet.from_lists(samples)
    if knots is None:
        knots = choose_knots(sset, default_knot_count(sset.total), seed)
    _, qmat_fit = stabilized_gram(space, knots)
    designs = additive_designs(space, knots, sset, weights)
    out = select_lambda_designs(designs, qmat_fit, sset.total, alpha, search)
    k = space.k
    out.rep = SplineRep(space, knots, out.state.beta[:k], out.state.beta[k:])
    return out


def fit_weighted(space: RkhsSpace, samples, weights, lam: float,
                 start: SplineRep | None = None, seed: int = 0,
                 knots: np.ndarray | None = None):
    """Weighted penalized-likelihood fit of h at a fixed lambda.

    Returns (SplineRep, NewtonDiagnostics).  ``weights`` is a sequence of
    per-sample callables (or None for unit weights).
    """
    sset = samples if isinstance(samples, SampleSet) else SampleSet.from_lists(samples)
    if knots is None:
        knots = choose_knots(sset, default_knot_count(sset.total), seed)
    _, qmat_fit = stabilized_gram(space, knots)
    designs = additive_designs(space, knots, sset, weights)
    state = fit_designs(designs, qmat_fit, lam,
                        start=None if start is None else start.beta)
    k = space.k
    rep = SplineRep(space, knots, state.beta[:k], state.beta[k:])
    return rep, state.diagnostics
