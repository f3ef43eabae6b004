"""Composition of the log-density surface eta_l from (theta, h).

Every model family reduces to the same recipe: build eta_l on a quadrature
rule, subtract the log-normalizer over that rule, and exponentiate where
needed.  ``h`` can be any callable (a fitted representer or a reference
function), so the same code serves estimation output and truth curves.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .quadrature import QuadratureRule, log_normalizer, make_rule
from .spaces import ModelSpec


def mixture_component_log_normalizer(model: ModelSpec, theta,
                                     rule: QuadratureRule | None = None,
                                     l: int = 0) -> float:
    """log int exp(alpha(x; theta_rest)) dx over the sample's domain.

    Normalizes the parametric mixture component; the integral runs over the
    model domain regardless of where the mixture is later evaluated.
    """
    theta = np.asarray(theta, dtype=float)
    if rule is None:
        rule = make_rule(model.domains[l])
    return log_normalizer(rule, model.form.eval(rule.nodes, theta[1:], l))


def eta_values(model: ModelSpec, theta, h, x, l: int = 0,
               f1_log_norm: float | None = None) -> np.ndarray:
    """Unnormalized log-density eta_l at points ``x``.

    For the two-component mixture the parametric part must be integrated
    over the model domain first; pass ``f1_log_norm`` to reuse that value
    across calls, otherwise it is computed here.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = np.asarray(theta, dtype=float)
    if model.composition == "additive":
        return model.form.eval(x, theta, l) + h(x)
    if model.composition == "transformation":
        # log-density of x carried back from the transformed scale, so the
        # derivative of the transform enters as the usual change-of-variables
        # factor
        with np.errstate(divide="ignore"):
            jac = np.log(np.abs(model.form.deriv(x, theta, l)))
        return np.asarray(h(model.form.eval(x, theta, l))) + jac
    if model.composition == "nonlinear":
        if f1_log_norm is None:
            f1_log_norm = mixture_component_log_normalizer(model, theta, l=l)
        log_f1 = model.form.eval(x, theta[1:], l) - f1_log_norm
        with np.errstate(divide="ignore"):
            a = np.log(theta[0]) + log_f1
            b = np.log1p(-theta[0]) + np.asarray(h(x))
        return np.logaddexp(a, b)
    raise ConfigurationError(f"unknown composition {model.composition!r}")


def log_density_values(model: ModelSpec, theta, h, rule: QuadratureRule,
                       at=None, l: int = 0) -> np.ndarray:
    """log f_l at ``at`` (default: the rule's nodes), normalized over ``rule``.

    Evaluating on a rule narrower or wider than the model domain
    renormalizes the fitted curve over that window, which is how densities
    on unbounded domains are compared on a fixed evaluation interval.
    """
    f1_log_norm = None
    if model.composition == "nonlinear":
        f1_log_norm = mixture_component_log_normalizer(model, theta, l=l)
    eta_nodes = eta_values(model, theta, h, rule.nodes, l, f1_log_norm)
    log_z = log_normalizer(rule, eta_nodes)
    if at is None:
        return eta_nodes - log_z
    return eta_values(model, theta, h, at, l, f1_log_norm) - log_z
