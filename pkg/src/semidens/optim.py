"""Derivative-free optimizers for the outer parameter searches.

The profiled objectives these drive are cheap in dimension (p <= 5) but
each evaluation runs a full inner fit, so both routines are written to be
frugal with evaluations and fully deterministic: no randomized restarts, a
fixed simplex construction, and tie-breaking that never depends on memory
layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

_PENALTY_BASE = 1e8


@dataclass
class SimplexResult:
    x: np.ndarray
    value: float
    n_eval: int
    converged: bool


def boxed(fn: Callable[[np.ndarray], float],
          lower: np.ndarray, upper: np.ndarray) -> Callable[[np.ndarray], float]:
    """Wrap ``fn`` with a box constraint via a graded out-of-bounds penalty.

    Outside the box the wrapped function returns a large sentinel plus the
    distance to the box, so the simplex is steered back inside rather than
    stalling on a flat plateau.  ``fn`` itself is never called outside.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)

    def wrapped(x):
        x = np.asarray(x, dtype=float)
        excess = np.maximum(lower - x, 0.0) + np.maximum(x - upper, 0.0)
        if np.any(excess > 0):
            return _PENALTY_BASE + float(np.sum(excess))
        return fn(x)

    return wrapped


def nelder_mead(fn: Callable[[np.ndarray], float],
                x0: np.ndarray,
                initial_step: np.ndarray | None = None,
                max_iter: int = 200,
                rel_tol: float = 1e-4) -> SimplexResult:
    """Minimize ``fn`` from ``x0`` with the standard reflect/expand/contract moves.

    Coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
    The initial simplex perturbs each coordinate by
    ``max(0.1 |x0_i|, 0.05)`` (or ``initial_step`` when given).  Stops when
    the relative value spread across the simplex drops to ``rel_tol`` or
    after ``max_iter`` iterations.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if initial_step is None:
        initial_step = np.maximum(0.1 * np.abs(x0), 0.05)
    else:
        initial_step = np.broadcast_to(np.asarray(initial_step, dtype=float), (n,))

    verts = [x0.copy()]
    for i in range(n):
        v = x0.copy()
        v[i] += initial_step[i]
        verts.append(v)
    verts = np.array(verts)
    vals = np.array([fn(v) for v in verts])
    n_eval = n + 1

    converged = False
    for _ in range(max_iter):
        order = np.argsort(vals, kind="stable")
        verts, vals = verts[order], vals[order]

        spread = abs(vals[-1] - vals[0])
        scale = max(abs(vals[0]), abs(vals[-1]), 1.0)
        if spread <= rel_tol * scale:
            converged = True
            break
        # simplex collapsed to one point in floating point; no move can help
        if np.max(np.abs(verts - verts[0])) <= 1e-9 * (1.0 + np.max(np.abs(verts[0]))):
            converged = True
            break

        centroid = verts[:-1].mean(axis=0)
        xr = centroid + (centroid - verts[-1])
        fr = fn(xr)
        n_eval += 1

        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - verts[-1])
            fe = fn(xe)
            n_eval += 1
            if fe < fr:
                verts[-1], vals[-1] = xe, fe
            else:
                verts[-1], vals[-1] = xr, fr
        elif fr < vals[-2]:
            verts[-1], vals[-1] = xr, fr
        else:
            if fr < vals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (verts[-1] - centroid)
            fc = fn(xc)
            n_eval += 1
            if fc < min(fr, vals[-1]):
                verts[-1], vals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    verts[i] = verts[0] + 0.5 * (verts[i] - verts[0])
                    vals[i] = fn(verts[i])
                n_eval += n

    best = int(np.argmin(vals))
    return SimplexResult(verts[best].copy(), float(vals[best]), n_eval, converged)


def golden_section(fn: Callable[[float], float],
                   lower: float, upper: float,
                   n_iter: int = 15) -> tuple[float, float]:
    """Golden-section minimization of a univariate ``fn`` on [lower, upper].

    Runs a fixed number of shrink steps and returns ``(x, fn(x))`` at the
    best probe.  Ties between probes resolve toward the upper end.
    """
    a, b = float(lower), float(upper)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    best_x, best_f = (d, fd) if fd <= fc else (c, fc)

    for _ in range(n_iter):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
        for x, f in ((c, fc), (d, fd)):
            if f < best_f or (f == best_f and x > best_x):
                best_x, best_f = x, f
    return best_x, best_f
