"""Characteristic roots of closed-loop pencils.

Roots are located by spectral collocation of the infinitesimal generator of the
equivalent delay equation on Chebyshev extreme points over ``[-h_max, 0]``,
then refined by Newton's method on the original pencil.  Right half-plane
root counts use the argument principle on ``det F`` instead.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import CharacteristicPencil


class DegeneratePencilError(ValueError):
    """The coefficient of ``lam`` is singular (roots at infinity / neutral chain)."""


class BoundaryRootError(ValueError):
    """A root lies on (or numerically on) the contour used for counting."""


@dataclass(frozen=True)
class SolverOpts:
    """Root-finder settings.

    ``re_min``/``im_max`` bound the reporting window; ``None`` picks the
    automatic window (``Re >= -5*max(|abscissa estimate|, 1)`` and
    ``|Im| <= 50/tau_min`` when the pencil has delays).  Use
    ``re_min=-np.inf`` to keep everything the discretization finds.
    ``max_roots`` keeps only that many rightmost roots (and refines only those).
    """

    N: int = 40
    newton_tol: float = 1e-10
    max_newton: int = 30
    re_min: float | None = None
    im_max: float | None = None
    max_roots: int | None = None

    def __post_init__(self):
        if self.N < 10:
            raise ValueError("collocation degree N must be at least 10")


@dataclass
class RootSet:
    roots: np.ndarray
    residuals: np.ndarray
    converged: np.ndarray
    discretization_N: int = 0
    candidates: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.roots)

    @property
    def abscissa(self) -> float:
        good = self.roots[self.converged]
        if len(good) == 0:
            return np.nan
        return float(np.max(good.real))

    def to_dict(self) -> dict:
        return {"roots": [[float(z.real), float(z.imag)] for z in self.roots],
                "residuals": [float(r) for r in self.residuals],
                "N": int(self.discretization_N)}

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["re", "im", "residual"])
        for z, r in zip(self.roots, self.residuals):
            w.writerow([repr(float(z.real)), repr(float(z.imag)), repr(float(r))])


# ---------------------------------------------------------------------------
# Collocation
# ---------------------------------------------------------------------------

def cheb(N: int):
    """Chebyshev extreme points ``x_j = cos(pi j / N)`` and differentiation matrix."""
    j = np.arange(N + 1)
    x = np.cos(np.pi * j / N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c = c * (-1.0) ** j
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D = D - np.diag(D.sum(axis=1))
    return x, D


def _bary_row(x, xstar):
    # Lagrange basis at xstar for Chebyshev extreme points (barycentric form)
    N = len(x) - 1
    w = (-1.0) ** np.arange(N + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = xstar - x
    hit = np.flatnonzero(np.abs(diff) < 1e-14)
    row = np.zeros(N + 1)
    if hit.size:
        row[hit[0]] = 1.0
        return row
    t = w / diff
    return t / t.sum()


def discretize(P: CharacteristicPencil, N: int):
    """Generalized eigenproblem ``A X = lam E X`` approximating the roots of ``P``.

    Returns ``(A, E, d)`` where ``d`` is the size of the augmented delay
    equation.  Only unknowns that appear delayed get a history discretization.
    """
    d, coeffs = P.dde_form()
    zero = np.zeros((d, d))
    E0 = coeffs.get((1, 0.0), zero)
    top = E0[:P.size, :P.size]
    if np.linalg.cond(top) > 1e12:
        raise DegeneratePencilError(
            "the coefficient of lam (I - B Kd C block) is singular; the closed loop is "
            "degenerate/neutral -- use chain_abscissa for the asymptotic root chain")
    hs = sorted({h for (_, h) in coeffs if h > 0})
    if not hs:
        return -coeffs.get((0, 0.0), zero), E0, d
    delayed = np.zeros(d, dtype=bool)
    for (a, h), Cm in coeffs.items():
        if h > 0:
            delayed |= np.any(Cm != 0, axis=0)
    Dcols = np.flatnonzero(delayed)
    nD = len(Dcols)
    hmax = hs[-1]
    x, Dx = cheb(N)
    Dth = Dx * (2.0 / hmax)
    size = d + N * nD
    dtype = np.result_type(*coeffs.values())
    A = np.zeros((size, size), dtype=dtype)
    E = np.eye(size, dtype=dtype)
    E[:d, :d] = E0
    A[:d, :d] = -coeffs.get((0, 0.0), zero)
    colidx = np.empty((N + 1, nD), dtype=int)
    colidx[0] = Dcols
    colidx[1:] = d + np.arange(N * nD).reshape(N, nD)
    cols = colidx.ravel()
    for (a, h), Cm in coeffs.items():
        if h == 0:
            continue
        ell = _bary_row(x, 1.0 - 2.0 * h / hmax)
        if a == 1:
            ell = ell @ Dth
        A[np.ix_(np.arange(d), cols)] += np.kron(ell, -Cm[:, Dcols])
    A[np.ix_(np.arange(d, size), cols)] += np.kron(Dth[1:], np.eye(nD))
    return A, E, d


def _eigvals(A, E):
    E0 = E
    if np.linalg.cond(E0) < 1e6:
        return np.linalg.eigvals(np.linalg.solve(E0, A))
    with np.errstate(all="ignore"):
        ev = scipy.linalg.eigvals(A, E0)
    return ev[np.isfinite(ev)]


# ---------------------------------------------------------------------------
# Newton refinement
# ---------------------------------------------------------------------------

def newton_refine(P: CharacteristicPencil, lam0: complex, v0=None, tol: float = 1e-10,
                  max_iter: int = 30):
    """Refine ``F(lam) v = 0`` with the normalization ``c^H v = 1``.

    Returns ``(lam, v, residual, converged)`` with the backward-error residual
    ``||F(lam) v|| / (sum_j |s_j(lam)| ||M_j|| * ||v||)``.  The denominator is
    used instead of ``||F(lam)||``, which vanishes at a root of a scalar pencil.
    """
    lam = complex(lam0)
    n = P.size
    F = P(lam)
    if v0 is None:
        _, _, Vh = np.linalg.svd(F)
        v0 = Vh[-1].conj()
    v = np.asarray(v0, dtype=complex)
    v = v / np.linalg.norm(v)
    c = v.copy()
    best = (lam, v, np.inf)
    polished = False
    J = np.zeros((n + 1, n + 1), dtype=complex)
    for _ in range(max_iter):
        Fv = F @ v
        res = np.linalg.norm(Fv) / (max(P.scale(lam), 1e-300) * np.linalg.norm(v))
        if res < best[2]:
            best = (lam, v, res)
        if res <= tol and polished:
            break
        J[:n, :n] = F
        J[:n, n] = P.deriv(lam) @ v
        J[n, :n] = c.conj()
        J[n, n] = 0
        rhs = -np.concatenate([Fv, [c.conj() @ v - 1]])
        try:
            step = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        v = v + step[:n]
        dlam = step[n]
        lam = lam + dlam
        if res <= tol or abs(dlam) <= 1e-15 * max(1.0, abs(lam)):
            polished = True
        try:
            F = P(lam)
        except ZeroDivisionError:
            break
    else:
        Fv = F @ v
        res = np.linalg.norm(Fv) / (max(P.scale(lam), 1e-300) * np.linalg.norm(v))
        if res < best[2]:
            best = (lam, v, res)
    lam, v, res = best
    return lam, v, res, bool(res <= tol)


def _dedupe(roots, residuals, converged):
    order = np.argsort(residuals)
    keep = []
    for i in order:
        z = roots[i]
        if any(abs(z - roots[j]) <= 1e-8 * max(1.0, abs(z)) for j in keep):
            continue
        keep.append(i)
    keep = np.array(keep, dtype=int)
    return roots[keep], residuals[keep], converged[keep]


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def rightmost_roots(P: CharacteristicPencil, opts: SolverOpts | None = None) -> RootSet:
    """Characteristic roots in the reporting window, sorted by descending real part."""
    opts = opts or SolverOpts()
    A, E, _ = discretize(P, opts.N)
    ev = _eigvals(A, E)
    ev = ev[np.isfinite(ev)]
    if ev.size == 0:
        return RootSet(np.zeros(0, complex), np.zeros(0), np.zeros(0, bool), opts.N, ev)
    real = P.is_real
    cand = ev[ev.imag >= -1e-9 * np.maximum(1.0, np.abs(ev))] if real else ev
    alpha_est = float(np.max(ev.real))
    re_min = opts.re_min if opts.re_min is not None else -5.0 * max(abs(alpha_est), 1.0)
    im_max = opts.im_max
    if im_max is None and P.delays:
        im_max = 50.0 / min(P.delays)
    sel = cand.real >= re_min
    if im_max is not None:
        sel &= np.abs(cand.imag) <= im_max
    cand = cand[sel]
    cand = cand[np.argsort(-cand.real, kind="stable")]
    if opts.max_roots is not None:
        cand = cand[:opts.max_roots]
    roots, res, conv = [], [], []
    for z0 in cand:
        lam, _, r, ok = newton_refine(P, z0, tol=opts.newton_tol, max_iter=opts.max_newton)
        if real and abs(lam.imag) <= 1e-10 * max(1.0, abs(lam)):
            lam = complex(lam.real, 0.0)
        roots.append(lam)
        res.append(r)
        conv.append(ok)
    roots = np.array(roots, dtype=complex)
    res = np.array(res, dtype=float)
    conv = np.array(conv, dtype=bool)
    if real and roots.size:
        mirror = roots.imag > 0
        roots = np.concatenate([roots, roots[mirror].conj()])
        res = np.concatenate([res, res[mirror]])
        conv = np.concatenate([conv, conv[mirror]])
    if roots.size:
        roots, res, conv = _dedupe(roots, res, conv)
        # Newton may wander out of the window; keep only what was asked for
        inside = roots.real >= re_min
        if im_max is not None:
            inside &= np.abs(roots.imag) <= im_max * 1.5
        roots, res, conv = roots[inside], res[inside], conv[inside]
        order = np.lexsort((-roots.imag, -roots.real))
        roots, res, conv = roots[order], res[order], conv[order]
        if opts.max_roots is not None:
            roots, res, conv = roots[:opts.max_roots], res[:opts.max_roots], conv[:opts.max_roots]
    return RootSet(roots, res, conv, opts.N, ev)


def spectral_abscissa(P: CharacteristicPencil, opts: SolverOpts | None = None,
                      candidates: int = 10) -> float:
    """Largest real part among converged roots (only the rightmost candidates are refined)."""
    opts = opts or SolverOpts()
    if opts.max_roots is None:
        opts = SolverOpts(N=opts.N, newton_tol=opts.newton_tol, max_newton=opts.max_newton,
                          re_min=opts.re_min, im_max=opts.im_max, max_roots=candidates)
    rs = rightmost_roots(P, opts)
    if not np.any(rs.converged):
        if len(rs):
            warnings.warn("no root converged; abscissa taken from unrefined estimates")
            return float(np.max(rs.roots.real))
        return -np.inf
    return rs.abscissa


def rhp_radius(P: CharacteristicPencil):
    """Upper bound on ``|lam|`` for roots with ``Re(lam) >= 0``, or ``None`` if unbounded.

    Splits ``F(lam) = lam (M0 + sum Mj e_j(lam)) + sum Nk c_k(lam)`` with
    ``|e_j| <= 1`` and ``|c_k| <= b_k`` on the closed right half-plane.
    """
    n = P.size
    M0 = np.zeros((n, n), dtype=complex)
    mass_pert = 0.0
    rest = 0.0
    for M, s in P.terms:
        has_lam, bound = s.rhp_bound()
        if not np.isfinite(bound):
            return None
        if has_lam:
            if s.factors == (s.factors[0],) and s.factors[0].kind == "lam":
                M0 = M0 + M
            else:
                mass_pert += np.linalg.norm(M, 2)
        else:
            rest += bound * np.linalg.norm(M, 2)
    try:
        inv_norm = np.linalg.norm(np.linalg.inv(M0), 2)
    except np.linalg.LinAlgError:
        return None
    if inv_norm * mass_pert >= 1:
        return None
    kappa = inv_norm / (1 - inv_norm * mass_pert)
    return kappa * rest


def _rect_points(rect, s):
    re0, re1, im0, im1 = rect
    corners = np.array([complex(re0, im0), complex(re1, im0), complex(re1, im1),
                        complex(re0, im1), complex(re0, im0)])
    k = np.minimum(np.floor(s).astype(int), 3)
    t = s - k
    return corners[k] + t * (corners[k + 1] - corners[k])


def count_rhp_roots(P: CharacteristicPencil, rect=None, *, max_points: int = 400_000,
                    max_rounds: int = 40) -> int:
    """Number of zeros minus poles of ``det F`` inside ``rect = (re0, re1, im0, im1)``.

    The default rectangle ``[0, R] x [-R, R]`` encloses every root in the closed
    right half-plane.  The boundary is refined until successive phase
    increments are at most ``pi/2``.
    """
    if rect is None:
        R = rhp_radius(P)
        if R is None:
            raise ValueError("no a-priori bound on right half-plane roots (neutral pencil?); "
                             "pass an explicit rectangle")
        if R > 1e8:
            raise BoundaryRootError(f"a-priori root radius {R:.3g} is too large to resolve; the "
                                    "lam-coefficient is nearly singular (roots near infinity)")
        R = 1.05 * R + 1.0
        rect = (0.0, R, -R, R)
    re0, re1, im0, im1 = (float(v) for v in rect)
    if not (re1 > re0 and im1 > im0):
        raise ValueError("rectangle must have positive width and height")
    lengths = [re1 - re0, im1 - im0, re1 - re0, im1 - im0]
    hmax = max(P.delays, default=0.0)
    s_parts = []
    for e, L in enumerate(lengths):
        npts = int(min(20_000, max(64, np.ceil(L * (1 + hmax) * 2))))
        s_parts.append(e + np.arange(npts) / npts)
    s = np.concatenate(s_parts + [np.array([4.0])])

    def phase_unit(svals):
        z = _rect_points((re0, re1, im0, im1), svals)
        with np.errstate(all="ignore"):
            sign, logabs = np.linalg.slogdet(P(z))
        if np.any(~np.isfinite(logabs)) or np.any(sign == 0):
            raise BoundaryRootError("det F vanishes on the contour; inflate the rectangle")
        return sign

    u = phase_unit(s)
    for _ in range(max_rounds + 1):
        dphi = np.angle(u[1:] / u[:-1])
        bad = np.flatnonzero(np.abs(dphi) > np.pi / 2)
        if bad.size == 0:
            break
        if s.size + bad.size > max_points or _ == max_rounds:
            raise BoundaryRootError("phase of det F cannot be resolved on the contour; a root "
                                    "is on or very near the boundary -- inflate the rectangle")
        mids = 0.5 * (s[bad] + s[bad + 1])
        um = phase_unit(mids)
        s = np.insert(s, bad + 1, mids)
        u = np.insert(u, bad + 1, um)
    winding = dphi.sum() / (2 * np.pi)
    return int(round(winding))


def matrix_alpha_rho(M):
    """Spectral abscissa and spectral radius of a square matrix."""
    M = np.atleast_2d(np.asarray(M))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if M.size == 0:
        return 0.0, 0.0
    ev = np.linalg.eigvals(M)
    return float(np.max(ev.real)), float(np.max(np.abs(ev)))


def chain_abscissa(sys, gains, r: float) -> float:
    """Real-part limit ``ln(rho(B Kd C)) / r`` of the neutral root chain under feedback delay ``r``."""
    if not r > 0:
        raise ValueError("r must be positive")
    BKdC = sys.B @ gains.Kd @ sys.C
    if not np.any(BKdC):
        raise ValueError("no neutral chain: B Kd C = 0")
    _, rho = matrix_alpha_rho(gains.Kd @ sys.C @ sys.B)
    if rho == 0:
        raise ValueError("no neutral chain: B Kd C is nilpotent")
    return float(np.log(rho) / r)
