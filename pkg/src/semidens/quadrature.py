"""Quadrature rules and the weighted moment functionals used by every solver.

Densities are handled through their logistic transform eta, so the three
quantities that appear over and over are the normalizer log int w e^eta dx,
the mean mu(g) = int g w e^eta / int w e^eta, and the covariance
v(g1, g2) = mu(g1 g2) - mu(g1) mu(g2).  Everything is computed on a fixed
Gauss-Legendre rule; weights w enter in log form because they come from
parametric components whose values can reach exp(+-500).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError
from .spaces import Domain

DEFAULT_NODES_BOUNDED = 200
DEFAULT_NODES_TRUNCATED = 300


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre nodes and weights mapped onto an interval."""

    nodes: np.ndarray
    weights: np.ndarray
    lower: float
    upper: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.size


def make_rule(domain: Domain, n_nodes: int | None = None) -> QuadratureRule:
    """Build a rule on ``domain``.

    ``n_nodes`` defaults to 200 on bounded intervals and 300 on truncated
    real-line domains, which is far more than the paper's smooth densities
    need but costs nothing at these problem sizes.
    """
    if n_nodes is None:
        n_nodes = (DEFAULT_NODES_BOUNDED if domain.kind == "bounded_interval"
                   else DEFAULT_NODES_TRUNCATED)
    if n_nodes < 8:
        raise ConfigurationError(f"need at least 8 quadrature nodes, got {n_nodes}")
    x, w = np.polynomial.legendre.leggauss(int(n_nodes))
    mid = 0.5 * (domain.lower + domain.upper)
    half = 0.5 * (domain.upper - domain.lower)
    return QuadratureRule(mid + half * x, half * w, domain.lower, domain.upper)


def integrate(rule: QuadratureRule, values: np.ndarray) -> float:
    """Plain integral of node values against the rule's weights."""
    return float(rule.weights @ np.asarray(values, dtype=float))


def _shifted(rule, eta, log_w):
    z = np.asarray(eta, dtype=float)
    if log_w is not None:
        z = z + np.asarray(log_w, dtype=float)
    top = np.max(z)
    if not np.isfinite(top):
        raise DegenerateInputError("log-integrand is degenerate (all -inf or non-finite)")
    return z, top


def log_normalizer(rule: QuadratureRule, eta: np.ndarray,
                   log_w: np.ndarray | None = None) -> float:
    """log int w e^eta dx with max-subtraction; ``log_w=None`` means w == 1."""
    z, top = _shifted(rule, eta, log_w)
    s = float(rule.weights @ np.exp(z - top))
    if s <= 0.0 or not np.isfinite(s):
        raise DegenerateInputError("normalizer underflowed to zero")
    return top + float(np.log(s))


def density_weights(rule: QuadratureRule, eta: np.ndarray,
                    log_w: np.ndarray | None = None) -> np.ndarray:
    """Per-node probability masses p_i of the density proportional to w e^eta.

    Sums to 1; the workhorse behind mu and v, exposed because the solvers
    reuse one set of masses for many moment evaluations.
    """
    z, top = _shifted(rule, eta, log_w)
    raw = rule.weights * np.exp(z - top)
    s = raw.sum()
    if s <= 0.0 or not np.isfinite(s):
        raise DegenerateInputError("normalizer underflowed to zero")
    return raw / s


def mu(rule: QuadratureRule, eta: np.ndarray, log_w: np.ndarray | None,
       g: np.ndarray) -> float:
    """Mean of g under the density proportional to w e^eta."""
    return float(density_weights(rule, eta, log_w) @ np.asarray(g, dtype=float))


def v(rule: QuadratureRule, eta: np.ndarray, log_w: np.ndarray | None,
      g1: np.ndarray, g2: np.ndarray) -> float:
    """Covariance of (g1, g2) under the density proportional to w e^eta."""
    p = density_weights(rule, eta, log_w)
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    return float(p @ (g1 * g2) - (p @ g1) * (p @ g2))
