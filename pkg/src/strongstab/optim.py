"""Nonsmooth minimization: BFGS with a weak Wolfe line search, plus gradient sampling.

BFGS with an inexact weak Wolfe search works well on nonsmooth, locally Lipschitz
objectives such as the spectral abscissa.  When it stalls (line search failure or
tiny steps) a few gradient-sampling iterations try to certify or escape the kink.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls


@dataclass
class OptimResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)
    message: str = ""


def weak_wolfe(fg, x, f, g, d, c1=1e-4, c2=0.9, max_evals=40):
    """Bisection/expansion search for a step meeting the weak Wolfe conditions.

    Returns ``(t, x_new, f_new, g_new, ok)``.  When ``ok`` is False but a point
    with sufficient decrease was found, that point is returned.
    """
    gd = float(g @ d)
    lo, hi = 0.0, np.inf
    t = 1.0
    best = None
    for _ in range(max_evals):
        xn = x + t * d
        fn, gn = fg(xn)
        if not np.isfinite(fn) or fn > f + c1 * t * gd:
            hi = t
        else:
            best = (t, xn, fn, gn)
            if float(gn @ d) < c2 * gd:
                lo = t
            else:
                return t, xn, fn, gn, True
        t = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * lo
        if hi - lo < 1e-14 * max(1.0, lo):
            break
    if best is not None:
        return (*best, False)
    return 0.0, x, f, g, False


def min_norm_hull(G):
    """Minimum-norm element of the convex hull of the columns of ``G``."""
    k = G.shape[1]
    scale = max(1.0, float(np.max(np.abs(G))))
    big = 1e3 * scale
    A = np.vstack([G, big * np.ones((1, k))])
    b = np.concatenate([np.zeros(G.shape[0]), [big]])
    w, _ = nnls(A, b, maxiter=50 * k)
    s = w.sum()
    if s > 0:
        w = w / s
    return G @ w


def gradient_sampling_step(fg, x, f, g, rng, eps, samples=None, armijo=1e-4):
    """One gradient-sampling iteration with sampling radius ``eps``.

    Returns ``(x, f, g, moved, dnorm)``.
    """
    n = x.size
    k = samples or min(n + 1, 60)
    grads = [g]
    for _ in range(k):
        u = rng.standard_normal(n)
        u *= eps * rng.uniform() ** (1.0 / n) / max(np.linalg.norm(u), 1e-300)
        fs, gs = fg(x + u)
        if np.isfinite(fs):
            grads.append(gs)
    d = -min_norm_hull(np.column_stack(grads))
    dn = float(np.linalg.norm(d))
    if dn <= 1e-12:
        return x, f, g, False, dn
    t = 1.0
    for _ in range(30):
        xn = x + t * d
        fn, gn = fg(xn)
        if np.isfinite(fn) and fn < f - armijo * t * dn**2:
            return xn, fn, gn, True, dn
        t *= 0.5
    return x, f, g, False, dn


def minimize(fg, x0, *, max_iters=200, step_tol=1e-10, f_tol=1e-12, rng=None,
             gs_radii=(1e-2, 1e-3, 1e-4, 1e-5), callback=None) -> OptimResult:
    """Minimize ``f`` given ``fg(x) -> (f, grad)``; every accepted step decreases ``f``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    trace = [float(f)]
    if not np.isfinite(f):
        return OptimResult(x, f, g, 0, trace, "infinite objective at the initial point")
    n = x.size
    H = np.eye(n)
    first = True
    msg = "max_iters reached"
    it = 0
    while it < max_iters:
        it += 1
        d = -H @ g
        if not float(g @ d) < 0:
            H = np.eye(n)
            first = True
            d = -g
        if np.linalg.norm(d) <= 1e-14:
            msg = "zero gradient"
            break
        t, xn, fn, gn, ok = weak_wolfe(fg, x, f, g, d)
        stalled = (not ok and t == 0.0) or \
            np.linalg.norm(xn - x) <= step_tol * (1 + np.linalg.norm(x)) or \
            (f - fn) <= f_tol * max(1.0, abs(f))
        if t > 0 and fn <= f:
            s, y = xn - x, gn - g
            x, f, g = xn, fn, gn
            trace.append(float(f))
            sy = float(s @ y)
            if ok and sy > 1e-16 * np.linalg.norm(s) * np.linalg.norm(y):
                if first:
                    H = (sy / float(y @ y)) * np.eye(n)
                    first = False
                rho = 1.0 / sy
                V = np.eye(n) - rho * np.outer(s, y)
                H = V @ H @ V.T + rho * np.outer(s, s)
        if callback is not None:
            callback(x, f)
        if stalled:
            moved = False
            for eps in gs_radii:
                xg, fgv, gg, moved, _ = gradient_sampling_step(fg, x, f, g, rng, eps)
                if moved:
                    x, f, g = xg, fgv, gg
                    trace.append(float(f))
                    H = np.eye(n)
                    first = True
                    break
            if not moved:
                msg = "stationary (gradient sampling found no descent)"
                break
    return OptimResult(x, f, g, it, trace, msg)
