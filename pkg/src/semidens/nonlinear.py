"""Gauss-Newton estimation for models where eta_l depends nonlinearly on h.

Around a current h-tilde, the Frechet derivative of eta_l in h is assumed
pointwise: (L_{l,x} g) = omega_l(x) g(s_l(x)).  Replacing eta by its
first-order expansion turns the problem into a weighted additive fit with
substituted basis columns omega * b(s(x)) and offset r = eta - L h_tilde,
which the damped Newton engine already solves.  Sweeping the linearization
point until the fitted h stops moving gives h_theta; the outer theta search
is the same profiled simplex as the additive path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .density import eta_values, mixture_component_log_normalizer
from .errors import (ConfigurationError, DegenerateInputError, EstimationError,
                     NumericalError)
from .inner import (SearchConfig, SplineRep, basis_matrix, choose_knots,
                    default_knot_count, make_design, select_lambda_designs,
                    stabilized_gram)
from .optim import boxed, nelder_mead
from .profile import FAILED_EVAL_SENTINEL, PROFILE_SEARCH, FitResult
from .quadrature import integrate, log_normalizer, make_rule
from .spaces import ModelSpec, SampleSet, make_space

log = logging.getLogger(__name__)

SWEEP_L2_TOL = 1e-5
MAX_SWEEPS = 50
MAX_SWEEP_HALVINGS = 8


@dataclass(frozen=True)
class PointwiseDerivative:
    """Frechet derivative of eta_l in h at (theta, h_tilde), in pointwise form.

    Applied to a direction g as omega(x) * g(carrier(x)); ``offset`` is
    r_l(x) = eta_l(x; theta, h_tilde) - omega(x) h_tilde(carrier(x)), the
    part of the expansion that does not move with g.
    """

    omega: Callable[[np.ndarray], np.ndarray]
    carrier: Callable[[np.ndarray], np.ndarray]
    offset: Callable[[np.ndarray], np.ndarray]

    def apply(self, g, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.omega(x) * np.asarray(g(self.carrier(x)))


def linearize(model: ModelSpec, theta, h_tilde) -> list[PointwiseDerivative]:
    """Per-sample pointwise derivatives of eta_l at (theta, h_tilde).

    ``h_tilde`` is any callable.  Additive models give the exact expansion
    omega == 1, r == alpha_l; the two-component mixture gives the mixing
    responsibility omega = (1-theta_0) e^h / (theta_0 f_1 + (1-theta_0) e^h).
    """
    theta = np.asarray(theta, dtype=float)

    def identity(x):
        return np.asarray(x, dtype=float)

    def unit(x):
        return np.ones_like(np.asarray(x, dtype=float))

    def additive_for(l):
        return PointwiseDerivative(
            unit, identity,
            lambda x: model.form.eval(np.asarray(x, dtype=float), theta, l))

    def transform_for(l):
        def log_jac(x):
            with np.errstate(divide="ignore"):
                return np.log(np.abs(model.form.deriv(
                    np.asarray(x, dtype=float), theta, l)))
        return PointwiseDerivative(
            unit,
            lambda x: model.form.eval(np.asarray(x, dtype=float), theta, l),
            log_jac)

    def mixture_for(l):
        f1_log_norm = mixture_component_log_normalizer(model, theta, l=l)

        def log_parts(x):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            log_f1 = model.form.eval(x, theta[1:], l) - f1_log_norm
            with np.errstate(divide="ignore"):
                a = np.log(theta[0]) + log_f1
                b = np.log1p(-theta[0]) + np.asarray(h_tilde(x))
            return a, b

        def omega(x):
            a, b = log_parts(x)
            return np.exp(b - np.logaddexp(a, b))

        def off(x):
            x = np.atleast_1d(np.asarray(x, dtype=float))
            a, b = log_parts(x)
            eta = np.logaddexp(a, b)
            return eta - np.exp(b - eta) * np.asarray(h_tilde(x))

        return PointwiseDerivative(omega, identity, off)

    factory = {"additive": additive_for, "transformation": transform_for,
               "nonlinear": mixture_for}.get(model.composition)
    if factory is None:
        raise ConfigurationError(
            f"no pointwise derivative for composition {model.composition!r}")
    return [factory(l) for l in range(model.m)]


def linearized_designs(model: ModelSpec, theta, h_tilde, space, knots,
                       rules, samples: SampleSet):
    """SampleDesigns of the expansion eta_l ~ omega_l * h(s_l(.)) + r_l."""
    derivs = linearize(model, theta, h_tilde)
    designs = []
    for l, drv in enumerate(derivs):
        nodes, data = rules[l].nodes, samples.groups[l]
        b_nodes = drv.omega(nodes)[:, None] * basis_matrix(space, knots,
                                                           drv.carrier(nodes))
        b_data = drv.omega(data)[:, None] * basis_matrix(space, knots,
                                                         drv.carrier(data))
        designs.append(make_design(rules[l], b_nodes, b_data,
                                   drv.offset(nodes), np.mean(drv.offset(data))))
    return designs


class MixtureProfile:
    """Per-theta Gauss-Newton sweeps, shared across outer evaluations."""

    def __init__(self, model: ModelSpec, samples: SampleSet, seed: int = 0,
                 alpha: float = 1.4, search: SearchConfig | None = None,
                 n_nodes: int | None = None):
        if model.composition not in ("additive", "nonlinear"):
            raise ConfigurationError(
                "Gauss-Newton fitting needs an additive or nonlinear model")
        samples.validate_domains(model.domains)
        self.model = model
        self.samples = samples
        self.alpha = alpha
        self.search = search or (PROFILE_SEARCH if model.p else SearchConfig())
        self.space = make_space(model.space_family, model.domains[0])
        self.knots = choose_knots(samples, default_knot_count(samples.total), seed)
        self.qmat, self.qmat_fit = stabilized_gram(self.space, self.knots)
        self.rules = [make_rule(d, n_nodes) for d in model.domains]
        self._b_nodes = [basis_matrix(self.space, self.knots, r.nodes)
                         for r in self.rules]
        self._b_data = [basis_matrix(self.space, self.knots, g)
                        for g in samples.groups]
        self._memo = {}
        self.n_evaluations = 0

    def _eta_pieces(self, theta):
        """Per-sample (at-nodes, at-data) eta evaluators in beta, theta fixed."""
        theta = np.asarray(theta, dtype=float)
        pieces = []
        for l, rule in enumerate(self.rules):
            if self.model.composition == "additive":
                a_nodes = self.model.form.eval(rule.nodes, theta, l)
                a_data = self.model.form.eval(self.samples.groups[l], theta, l)

                def make(a_n=a_nodes, a_d=a_data, bn=self._b_nodes[l],
                         bd=self._b_data[l]):
                    return (lambda beta: a_n + bn @ beta,
                            lambda beta: a_d + bd @ beta)
            else:
                f1_log_norm = mixture_component_log_normalizer(
                    self.model, theta, rule, l)
                with np.errstate(divide="ignore"):
                    log_t0 = np.log(theta[0])
                    log_t1 = np.log1p(-theta[0])
                a_nodes = log_t0 + self.model.form.eval(rule.nodes, theta[1:],
                                                        l) - f1_log_norm
                a_data = log_t0 + self.model.form.eval(self.samples.groups[l],
                                                       theta[1:], l) - f1_log_norm

                def make(a_n=a_nodes, a_d=a_data, bn=self._b_nodes[l],
                         bd=self._b_data[l], lt=log_t1):
                    return (lambda beta: np.logaddexp(a_n, lt + bn @ beta),
                            lambda beta: np.logaddexp(a_d, lt + bd @ beta))
            pieces.append(make())
        return pieces

    def _objective_from_beta(self, pieces, beta, lam: float) -> float:
        """Penalized likelihood of the exact (non-linearized) eta at beta."""
        k = self.space.k
        val = 0.5 * lam * float(beta[k:] @ self.qmat_fit @ beta[k:])
        for l, rule in enumerate(self.rules):
            eta_nodes, eta_data = pieces[l][0](beta), pieces[l][1](beta)
            val += log_normalizer(rule, eta_nodes) - float(np.mean(eta_data))
        return val

    def _true_objective(self, theta, rep: SplineRep, lam: float) -> float:
        val = 0.5 * lam * float(rep.c @ self.qmat_fit @ rep.c)
        for l, rule in enumerate(self.rules):
            eta_nodes = eta_values(self.model, theta, rep, rule.nodes, l)
            eta_data = eta_values(self.model, theta, rep, self.samples.groups[l], l)
            val += log_normalizer(rule, eta_nodes) - float(np.mean(eta_data))
        return val

    def sweeps_at(self, theta):
        """Run linearize/fit sweeps from h = 0; returns the converged pieces.

        The linearized solution can overshoot flat directions of the exact
        objective and bounce, so each sweep scans the whole step-halving
        ladder against the exact objective and keeps the best point (ties
        favor the longer step, preserving the full Gauss-Newton step near a
        fixed point).
        """
        self.n_evaluations += 1
        theta = np.asarray(theta, dtype=float)
        k = self.space.k
        dim = k + self.knots.size
        beta = np.zeros(dim)
        rep = SplineRep(self.space, self.knots, beta[:k], beta[k:])
        rule0 = self.rules[0]
        b_h_nodes = self._b_nodes[0]
        pieces = self._eta_pieces(theta)

        sel = None
        sweeps = 0
        converged = False
        for sweeps in range(1, MAX_SWEEPS + 1):
            designs = linearized_designs(self.model, theta, rep, self.space,
                                         self.knots, self.rules, self.samples)
            sel = select_lambda_designs(designs, self.qmat_fit,
                                        self.samples.total, self.alpha,
                                        self.search)
            current = self._objective_from_beta(pieces, beta, sel.lam)
            delta = sel.state.beta - beta
            step = 1.0
            best_step, best_obj = None, current
            for _ in range(MAX_SWEEP_HALVINGS + 1):
                obj = self._objective_from_beta(pieces, beta + step * delta,
                                                sel.lam)
                if obj < best_obj:
                    best_step, best_obj = step, obj
                step *= 0.5
            if best_step is None:
                converged = True  # no descent left along the sweep direction
                break
            move = best_step * delta
            beta = beta + move
            rep = SplineRep(self.space, self.knots, beta[:k], beta[k:])
            l2 = np.sqrt(integrate(rule0, (b_h_nodes @ move) ** 2))
            if l2 <= SWEEP_L2_TOL:
                converged = True
                break
        return theta, rep, sel, converged, sweeps

    def value_from(self, theta, rep, sel) -> float:
        return self._true_objective(theta, rep, sel.lam)

    def objective(self, theta) -> float:
        key = np.asarray(theta, dtype=float).tobytes()
        if key in self._memo:
            return self._memo[key]
        try:
            th, rep, sel, _, _ = self.sweeps_at(theta)
            value = self.value_from(th, rep, sel)
        except (DegenerateInputError, NumericalError, EstimationError) as exc:
            log.warning("Gauss-Newton evaluation failed at theta=%s: %s",
                        theta, exc)
            value = FAILED_EVAL_SENTINEL
        self._memo[key] = value
        return value


def fit_nonlinear(model: ModelSpec, samples: SampleSet, seed: int = 0,
                  alpha: float = 1.4, search: SearchConfig | None = None,
                  max_outer: int = 200, outer_tol: float = 1e-4,
                  n_nodes: int | None = None) -> FitResult:
    """Profile theta over the Gauss-Newton inner solution.

    Each outer evaluation restarts the sweeps from h = 0, so the objective
    is a pure function of theta and the simplex never sees stale values.
    """
    driver = MixtureProfile(model, samples, seed, alpha, search, n_nodes)

    if model.p == 0:
        theta, rep, sel, conv, sweeps = driver.sweeps_at(np.empty(0))
        return FitResult(theta, rep, sel.lam, driver.value_from(theta, rep, sel),
                         0, sel.state.diagnostics,
                         conv and sel.state.diagnostics.converged,
                         sel.boundary, driver.n_evaluations, n_sweeps=sweeps)

    theta0 = np.asarray(model.theta0, dtype=float)
    if not model.theta_in_domain(theta0):
        raise ConfigurationError("theta0 outside the parameter box")
    lo, hi = model.theta_bounds()
    result = nelder_mead(boxed(driver.objective, lo, hi), theta0,
                         max_iter=max_outer, rel_tol=outer_tol)
    if result.value >= FAILED_EVAL_SENTINEL:
        raise EstimationError("every Gauss-Newton evaluation failed or left the box")

    theta_hat = np.clip(result.x, lo, hi)
    theta_hat, rep, sel, sweep_conv, sweeps = driver.sweeps_at(theta_hat)
    return FitResult(theta_hat, rep, sel.lam,
                     driver.value_from(theta_hat, rep, sel),
                     result.n_eval, sel.state.diagnostics,
                     result.converged and sweep_conv
                     and sel.state.diagnostics.converged,
                     sel.boundary, driver.n_evaluations, n_sweeps=sweeps)
