"""Domains, RKHS function spaces, the parametric-form catalog, and model specs.

The function spaces come in three families:

``sobolev2_unit``
    Second-order Sobolev space on a bounded interval, penalty
    ``int (h'')^2``.  Null space of the penalty is {1, x}; constants are
    excluded for identifiability, so the free null basis is the centered
    linear term.

``sobolev3_unit``
    Third-order space, penalty ``int (h''')^2``, with {1, x, x^2} all
    excluded (the quadratic null space is what a Normal-type parametric
    component already provides).

``thinplate_real``
    Univariate thin-plate space on the real line, penalty ``int (h'')^2``,
    constants excluded, free null basis {x}.

Bounded-interval kernels use the scaled-Bernoulli-polynomial construction
standard in the smoothing-spline literature; the interval is affinely mapped
to [0, 1] so conditioning does not depend on the data scale.  The thin-plate
kernel is the cubic semi-kernel |x-y|^3 / 12 made positive semidefinite by
pinning it at two anchor points, which folds the conditional-positivity side
conditions into the kernel itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateInputError

SPACE_FAMILIES = ("sobolev2_unit", "sobolev2_kernel", "sobolev3_unit",
                  "thinplate_real")
COMPOSITIONS = ("additive", "nonlinear", "transformation")


# ------------------------------------------------------------------ #
# Domains
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class Domain:
    """An integration domain: a bounded interval or a truncated real line.

    For ``real_line`` the bounds are quadrature truncation limits derived
    from data, not part of the model itself.
    """

    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in ("bounded_interval", "real_line"):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ConfigurationError(
                f"domain requires lower < upper, got [{self.lower}, {self.upper}]")

    def contains(self, x: np.ndarray) -> np.ndarray:
        return (x >= self.lower) & (x <= self.upper)


def domain_from_data(data: np.ndarray, pad: float = 0.4) -> Domain:
    """Truncated real-line domain: data range padded by ``pad`` times the range."""
    lo, hi = float(np.min(data)), float(np.max(data))
    r = hi - lo
    if r <= 0:
        raise DegenerateInputError("cannot derive a domain from zero-spread data")
    return Domain("real_line", lo - pad * r, hi + pad * r)


# ------------------------------------------------------------------ #
# Bernoulli-polynomial kernels on the unit interval
# ------------------------------------------------------------------ #

def _k1(t):
    return t - 0.5


def _k2(t):
    a = _k1(t)
    return 0.5 * (a * a - 1.0 / 12.0)


def _k3(t):
    a = _k1(t)
    return (a ** 3 - 0.25 * a) / 6.0


def _k4(t):
    a = _k1(t)
    return (a ** 4 - 0.5 * a * a + 7.0 / 240.0) / 24.0


def _k6(t):
    # Bernoulli polynomial B6 / 6!
    return (t ** 6 - 3.0 * t ** 5 + 2.5 * t ** 4 - 0.5 * t * t + 1.0 / 42.0) / 720.0


def _rk_sobolev2(s, t):
    return _k2(s) * _k2(t) - _k4(np.abs(s - t))


def _rk_sobolev3(s, t):
    return _k3(s) * _k3(t) + _k6(np.abs(s - t))


def _thinplate_semikernel(x, y):
    return np.abs(x - y) ** 3 / 12.0


# ------------------------------------------------------------------ #
# Function spaces
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class RkhsSpace:
    """A concrete penalized function space: null basis, kernel, penalty order.

    Immutable; shared freely across concurrent fits.  ``psi`` maps an array
    of points to an ``(n, k)`` matrix of null-basis values, ``rk`` evaluates
    the reproducing kernel with broadcasting.
    """

    family: str
    k: int
    penalty_order: int
    lower: float
    upper: float
    psi: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    rk: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)


def make_space(family: str, domain: Domain | None = None) -> RkhsSpace:
    """Construct a function space, mapped onto ``domain`` when given.

    Sobolev families default to the unit interval; ``thinplate_real``
    defaults to anchors at 0 and 1.  The anchor / mapping choice changes the
    finite-dimensional parametrization, never the induced space or penalty.
    """
    if family not in SPACE_FAMILIES:
        raise ConfigurationError(f"unknown space family {family!r}")
    lo, hi = (0.0, 1.0) if domain is None else (domain.lower, domain.upper)
    width = hi - lo

    if family in ("sobolev2_unit", "sobolev2_kernel"):
        # the _kernel variant drops the free linear direction; it is the
        # identifiable companion space when a parametric component already
        # spans the linear term
        k = 1 if family == "sobolev2_unit" else 0

        def psi(x):
            t = (np.asarray(x, dtype=float) - lo) / width
            out = (t - 0.5).reshape(-1, 1)
            return out[:, :k]

        def rk(z, x):
            return _rk_sobolev2((np.asarray(z, dtype=float) - lo) / width,
                                (np.asarray(x, dtype=float) - lo) / width)

        return RkhsSpace(family, k, 2, lo, hi, psi, rk)

    if family == "sobolev3_unit":
        def psi(x):
            return np.empty((np.asarray(x).size, 0))

        def rk(z, x):
            return _rk_sobolev3((np.asarray(z, dtype=float) - lo) / width,
                                (np.asarray(x, dtype=float) - lo) / width)

        return RkhsSpace(family, 0, 3, lo, hi, psi, rk)

    # thinplate_real: pin the cubic semi-kernel at the anchors a1=lo, a2=hi.
    a1, a2 = lo, hi
    e12 = _thinplate_semikernel(a1, a2)

    def psi(x):
        return np.asarray(x, dtype=float).reshape(-1, 1)

    def rk(z, x):
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        p2z = (z - a1) / (a2 - a1)
        p1z = 1.0 - p2z
        p2x = (x - a1) / (a2 - a1)
        p1x = 1.0 - p2x
        out = _thinplate_semikernel(z, x)
        out = out - p1z * _thinplate_semikernel(a1, x) - p2z * _thinplate_semikernel(a2, x)
        out = out - p1x * _thinplate_semikernel(z, a1) - p2x * _thinplate_semikernel(z, a2)
        out = out + p1z * p1x * 0.0 + (p1z * p2x + p2z * p1x) * e12 + p2z * p2x * 0.0
        return out

    return RkhsSpace(family, 1, 2, lo, hi, psi, rk)


def null_basis_eval(space: RkhsSpace, x) -> np.ndarray:
    """Null-space basis values at ``x``: a length-k vector for scalar input."""
    out = space.psi(np.atleast_1d(np.asarray(x, dtype=float)))
    return out[0] if np.isscalar(x) or np.ndim(x) == 0 else out


def penalty_gram(space: RkhsSpace, knots: np.ndarray) -> np.ndarray:
    """Penalty Gram matrix ``Q[i, j] = R(Z_i, Z_j)`` over distinct knots."""
    z = np.asarray(knots, dtype=float)
    if z.ndim != 1 or z.size < 1:
        raise ConfigurationError("knots must be a nonempty 1-d array")
    if np.unique(z).size != z.size:
        raise DegenerateInputError("duplicate knots make the Gram matrix degenerate")
    q = space.rk(z[:, None], z[None, :])
    return 0.5 * (q + q.T)


# ------------------------------------------------------------------ #
# Parametric forms
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class ParametricForm:
    """A cataloged parametric component ``alpha_l(x; theta)``.

    ``eval`` returns alpha values; transforms additionally expose the
    derivative and inverse maps used by the backfitting estimator.
    ``theta_lower``/``theta_upper`` are box constraints per coordinate.
    """

    id: str
    p: int
    theta_lower: np.ndarray
    theta_upper: np.ndarray
    eval: Callable[[np.ndarray, np.ndarray, int], np.ndarray] = field(repr=False)
    is_invertible_transform: bool = False
    deriv: Callable[[np.ndarray, np.ndarray, int], np.ndarray] | None = field(
        default=None, repr=False)
    inverse: Callable[[np.ndarray, np.ndarray, int], np.ndarray] | None = field(
        default=None, repr=False)

    def theta_in_domain(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.theta_lower) and np.all(theta <= self.theta_upper))


_EXP_CLIP = 500.0  # keeps exp() finite; theta boxes normally prevent reaching it


def make_form(form_id: str, **options) -> ParametricForm:
    """Build a cataloged parametric form.

    Options: ``degrees`` for ``linear_basis`` (monomial degrees), ``lams``
    for ``exptilt_mixture`` (known per-sample mixing fractions).
    """
    if form_id == "linear_basis":
        degrees = tuple(options.pop("degrees", (1,)))
        _check_no_options(form_id, options)
        p = len(degrees)

        def ev(x, theta, l):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            for i in range(p):
                out += theta[i] * x ** degrees[i]
            return out

        return ParametricForm("linear_basis", p,
                              np.full(p, -1e6), np.full(p, 1e6), ev)

    if form_id == "truncnorm_logit":
        _check_no_options(form_id, options)

        def ev(x, theta, l):
            mu_, sig = theta
            x = np.asarray(x, dtype=float)
            return -x * x / (2.0 * sig * sig) + mu_ * x / (sig * sig)

        return ParametricForm("truncnorm_logit", 2,
                              np.array([-25.0, 0.02]), np.array([25.0, 25.0]), ev)

    if form_id == "gumbel_logit":
        _check_no_options(form_id, options)

        def ev(x, theta, l):
            mu_, sig = theta
            z = (np.asarray(x, dtype=float) - mu_) / sig
            return -z - np.exp(np.clip(-z, None, _EXP_CLIP))

        return ParametricForm("gumbel_logit", 2,
                              np.array([-25.0, 0.02]), np.array([25.0, 25.0]), ev)

    if form_id == "exptilt_mixture":
        lams = np.asarray(options.pop("lams", (0.5,)), dtype=float)
        _check_no_options(form_id, options)
        if np.any(lams < 0) or np.any(lams > 1):
            raise ConfigurationError("mixing fractions must lie in [0, 1]")

        def ev(x, theta, l):
            t1, t2 = theta
            lam = lams[l]
            u = np.clip(t1 + t2 * np.asarray(x, dtype=float), None, _EXP_CLIP)
            if lam <= 0.0:
                return u
            if lam >= 1.0:
                return np.zeros_like(u)
            return np.logaddexp(np.log(lam), np.log1p(-lam) + u)

        return ParametricForm("exptilt_mixture", 2,
                              np.array([-50.0, -50.0]), np.array([50.0, 50.0]), ev)

    if form_id == "power_transform":
        _check_no_options(form_id, options)

        def ev(x, theta, l):
            return np.asarray(x, dtype=float) ** theta[0]

        def dv(x, theta, l):
            g = theta[0]
            return g * np.asarray(x, dtype=float) ** (g - 1.0)

        def inv(y, theta, l):
            return np.asarray(y, dtype=float) ** (1.0 / theta[0])

        return ParametricForm("power_transform", 1,
                              np.array([0.05]), np.array([20.0]), ev,
                              is_invertible_transform=True, deriv=dv, inverse=inv)

    if form_id == "location_scale":
        _check_no_options(form_id, options)

        def ev(x, theta, l):
            x = np.asarray(x, dtype=float)
            if l == 0:
                return x.copy()
            return (x - theta[0]) / theta[1]

        def dv(x, theta, l):
            x = np.asarray(x, dtype=float)
            if l == 0:
                return np.ones_like(x)
            return np.full_like(x, 1.0 / theta[1])

        def inv(y, theta, l):
            y = np.asarray(y, dtype=float)
            if l == 0:
                return y.copy()
            return theta[0] + theta[1] * y

        return ParametricForm("location_scale", 2,
                              np.array([-100.0, 0.05]), np.array([100.0, 50.0]), ev,
                              is_invertible_transform=True, deriv=dv, inverse=inv)

    if form_id == "mixnorm_logdensity":
        _check_no_options(form_id, options)

        def ev(x, theta, l):
            w, mu1, sig1, mu2, sig2 = theta
            x = np.asarray(x, dtype=float)
            l1 = -0.5 * ((x - mu1) / sig1) ** 2 - np.log(sig1) - 0.5 * np.log(2 * np.pi)
            l2 = -0.5 * ((x - mu2) / sig2) ** 2 - np.log(sig2) - 0.5 * np.log(2 * np.pi)
            return np.logaddexp(np.log(w) + l1, np.log1p(-w) + l2)

        return ParametricForm(
            "mixnorm_logdensity", 5,
            np.array([1e-3, -1e4, 1e-3, -1e4, 1e-3]),
            np.array([1.0 - 1e-3, 1e4, 1e4, 1e4, 1e4]), ev)

    raise ConfigurationError(f"unknown parametric form {form_id!r}")


def _check_no_options(form_id, options):
    if options:
        raise ConfigurationError(
            f"unsupported options for form {form_id!r}: {sorted(options)}")


# ------------------------------------------------------------------ #
# Model specification and samples
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class ModelSpec:
    """Full declarative model: composition, parametric form, space, domains.

    ``additive`` composes ``eta_l = alpha_l(x; theta) + h(x)``.
    ``nonlinear`` composes the two-component mixture
    ``eta = log(theta_0 f_1(x; theta_rest) + (1 - theta_0) exp(h))`` where
    ``f_1`` is the normalized density built from the form's alpha; the
    mixing weight is prepended to the form's parameter vector.
    ``transformation`` composes ``eta_l = h(alpha_l(x; theta))`` and is
    handled by the backfitting fitter.
    """

    m: int
    composition: str
    form: ParametricForm
    space_family: str
    domains: tuple[Domain, ...]
    theta0: np.ndarray

    def __post_init__(self):
        if self.composition not in COMPOSITIONS:
            raise ConfigurationError(f"unknown composition {self.composition!r}")
        if self.space_family not in SPACE_FAMILIES:
            raise ConfigurationError(f"unknown space family {self.space_family!r}")
        if len(self.domains) != self.m or self.m < 1:
            raise ConfigurationError("need one domain per sample")
        if self.composition == "transformation" and not self.form.is_invertible_transform:
            raise ConfigurationError(
                f"form {self.form.id!r} is not an invertible transform")
        if len(self.theta0) != self.p:
            raise ConfigurationError(
                f"theta0 has length {len(self.theta0)}, model needs {self.p}")

    @property
    def p(self) -> int:
        """Total parameter dimension (mixture weight included for nonlinear)."""
        return self.form.p + 1 if self.composition == "nonlinear" else self.form.p

    def theta_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.form.theta_lower, self.form.theta_upper
        if self.composition == "nonlinear":
            lo = np.concatenate([[0.0], lo])
            hi = np.concatenate([[1.0], hi])
        return lo, hi

    def theta_in_domain(self, theta: np.ndarray) -> bool:
        lo, hi = self.theta_bounds()
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= lo) and np.all(theta <= hi))


@dataclass(frozen=True)
class SampleSet:
    """Observed groups, stored sorted within each group.

    Sorting makes every downstream reduction independent of input order,
    which is what keeps refits bitwise reproducible under permutation.
    """

    groups: tuple[np.ndarray, ...]
    seed_tag: str = ""

    @staticmethod
    def from_lists(groups: Sequence[Sequence[float]], seed_tag: str = "") -> "SampleSet":
        arrays = tuple(np.sort(np.asarray(g, dtype=float)) for g in groups)
        for g in arrays:
            if g.size < 2:
                raise ConfigurationError("each group needs at least 2 observations")
            if not np.all(np.isfinite(g)):
                raise ConfigurationError("non-finite observation")
        return SampleSet(arrays, seed_tag)

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def total(self) -> int:
        return int(sum(g.size for g in self.groups))

    def pooled(self) -> np.ndarray:
        return np.sort(np.concatenate(self.groups))

    def validate_domains(self, domains: Sequence[Domain]) -> None:
        for g, d in zip(self.groups, domains):
            if not np.all(d.contains(g)):
                raise ConfigurationError(
                    f"observations outside domain [{d.lower}, {d.upper}]")
