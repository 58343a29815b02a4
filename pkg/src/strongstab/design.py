"""Design of strongly stabilizing PID controllers by spectral-abscissa minimization.

Per start:

1. initialize the gains (given, or i.i.d. standard normal entries);
2. rescale ``Kd`` by ``0.9/alpha(B Kd C)`` when that abscissa exceeds 0.9;
3. minimize ``f(Kp, Kd, Ki) + t * max(0, alpha(B Kd C) - 1)``, raising ``t``
   tenfold (at most three times) until the constraint holds;
4. pick a low-pass constant ``T`` (:func:`select_T`).

With an input delay the constraint is ``rho(B Kd C) < 1`` and is enforced by a
log barrier instead.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .analysis import bkdc_eigs
from .model import LoopConfig, PidGains, assemble_pencil
from .optim import minimize
from .perturbation_lab import thread_cap
from .spectra import DegeneratePencilError, SolverOpts, rightmost_roots, spectral_abscissa

GAIN_NAMES = ("Kp", "Kd", "Ki")


@dataclass(frozen=True)
class DesignOpts:
    """Settings for :func:`design_pid` and :func:`design_input_delay`.

    ``structure_mask`` maps ``"Kp"``/``"Kd"``/``"Ki"`` to boolean ``m x p``
    arrays; ``False`` entries are held at zero.  ``initial`` seeds start 0.
    ``solver`` is used inside the iterations (the collocation only seeds Newton,
    so a modest ``N`` suffices); every reported number is recomputed with
    ``verify``.
    """

    starts: int = 10
    seed: int = 0
    t_penalty: float = 1e2
    max_iters: int = 1000
    step_tol: float = 1e-10
    structure_mask: dict | None = None
    initial: PidGains | None = None
    rescale: bool = True
    constrained: bool = True
    escalations: int = 3
    select_T: bool = True
    mu0: float = 1e-2
    barrier_loops: int = 3
    solver: SolverOpts = field(default_factory=lambda: SolverOpts(N=24))
    verify: SolverOpts = field(default_factory=SolverOpts)
    candidates: int = 8

    def __post_init__(self):
        if self.starts < 1:
            raise ValueError("starts must be at least 1")
        if not self.t_penalty > 0:
            raise ValueError("t_penalty must be positive")


@dataclass
class StartRecord:
    index: int
    objective: float
    alpha_constraint: float
    feasible: bool
    iterations: int
    t_final: float
    trace: list
    message: str = ""


@dataclass
class DesignResult:
    gains: PidGains
    objective: float
    alpha_constraint: float
    T_selected: float | None
    trace: list
    feasible: bool
    starts: list = field(default_factory=list)
    best_start: int = 0
    constraint: str = "alpha"

    def to_dict(self) -> dict:
        return {
            "gains": self.gains.to_dict(),
            "objective": self.objective,
            "alpha_constraint": self.alpha_constraint,
            "constraint": self.constraint,
            "T_selected": self.T_selected,
            "feasible": self.feasible,
            "best_start": self.best_start,
            "starts": [{"index": s.index, "objective": s.objective,
                        "alpha_constraint": s.alpha_constraint, "feasible": s.feasible,
                        "iterations": s.iterations, "t_final": s.t_final,
                        "message": s.message, "trace": s.trace} for s in self.starts],
        }


# ---------------------------------------------------------------------------
# Constraint functions and their gradients
# ---------------------------------------------------------------------------

def _kdcb_eig(sys, Kd, which):
    """Extreme eigenvalue of ``Kd C B`` with its derivative with respect to ``Kd``."""
    CB = sys.C @ sys.B
    M = Kd @ CB
    w, VL, VR = scipy.linalg.eig(M, left=True, right=True)
    key = w.real if which == "alpha" else np.abs(w)
    i = int(np.argmax(key))
    eta, xi, zeta = w[i], VR[:, i], VL[:, i]
    # d eta = zeta^H dKd CB xi / (zeta^H xi)
    deta = np.outer(zeta.conj(), CB @ xi) / (zeta.conj() @ xi)
    if which == "alpha":
        val, grad = eta.real, deta.real
    else:
        val = abs(eta)
        grad = (np.conj(eta) / max(val, 1e-300) * deta).real if val > 0 else np.zeros_like(Kd)
    # B Kd C has n - m extra zero eigenvalues
    if sys.n > sys.m and val < 0:
        return 0.0, np.zeros_like(Kd)
    return float(val), grad


def alpha_bkdc(sys, Kd) -> float:
    return float(np.max(bkdc_eigs(sys, Kd).real))


def rho_bkdc(sys, Kd) -> float:
    return float(np.max(np.abs(bkdc_eigs(sys, Kd))))


# ---------------------------------------------------------------------------
# Abscissa gradient
# ---------------------------------------------------------------------------

@dataclass
class AbscissaGradient:
    abscissa: float
    root: complex
    dKp: np.ndarray
    dKd: np.ndarray
    dKi: np.ndarray
    nonsmooth: bool = False

    def as_dict(self):
        return {"Kp": self.dKp, "Kd": self.dKd, "Ki": self.dKi}


def _reduced(sys, gains, lam):
    """Reduced ``n x n`` characteristic matrix ``G(lam)`` and ``G'(lam)`` (integral term as ``Ki/lam``)."""
    n = sys.n
    tau_u = sys.input_delay or 0.0
    s = np.exp(-lam * tau_u)
    ds = -tau_u * s
    K = gains.Kp + lam * gains.Kd + gains.Ki / lam
    dK = gains.Kd - gains.Ki / lam**2
    G = lam * np.eye(n) - sys.A[0] - (sys.B @ K @ sys.C) * s
    dG = np.eye(n) - (sys.B @ dK @ sys.C) * s - (sys.B @ K @ sys.C) * ds
    for Ak, tau in zip(sys.A[1:], sys.delays):
        e = np.exp(-lam * tau)
        G = G - Ak * e
        dG = dG + tau * Ak * e
    return G, dG, s


def abscissa_gradient(sys, gains, opts: SolverOpts | None = None, candidates: int = 8
                      ) -> AbscissaGradient:
    """Spectral abscissa of the nominal loop and its derivative with respect to every gain entry.

    With ``lam`` the rightmost root and ``x``, ``y`` right/left null vectors of
    ``G(lam)``, ``d lam / d Kp = s (B^T conj(y)) (C x)^T / (y^H G'(lam) x)``;
    the ``Kd`` and ``Ki`` derivatives carry extra factors ``lam`` and ``1/lam``.
    When several distinct roots share the maximal real part the gradient of one
    of them (largest imaginary part) is returned and ``nonsmooth`` is set.
    """
    opts = opts or SolverOpts()
    if opts.max_roots is None:
        opts = SolverOpts(N=opts.N, newton_tol=opts.newton_tol, max_newton=opts.max_newton,
                          re_min=opts.re_min, im_max=opts.im_max, max_roots=candidates)
    rs = rightmost_roots(assemble_pencil(sys, gains), opts)
    roots = rs.roots[rs.converged]
    if roots.size == 0:
        roots = rs.roots
    if roots.size == 0:
        raise ValueError("no characteristic roots found in the solver window")
    amax = float(np.max(roots.real))
    top = roots[roots.real >= amax - 1e-12 * max(1.0, abs(amax))]
    lam = complex(top[np.argmax(top.imag)])
    others = roots[np.abs(roots - lam) > 1e-8 * max(1.0, abs(lam))]
    others = others[np.abs(others - np.conj(lam)) > 1e-8 * max(1.0, abs(lam))]
    nonsmooth = bool(np.any(others.real >= amax - 1e-8))
    if abs(lam) < 1e-10:
        raise ValueError("rightmost root at the origin; gradient undefined")
    G, dG, s = _reduced(sys, gains, lam)
    U, _, Vh = np.linalg.svd(G)
    x = Vh[-1].conj()
    y = U[:, -1]
    den = y.conj() @ dG @ x
    core = np.outer(sys.B.T @ y.conj(), sys.C @ x) * s / den
    return AbscissaGradient(amax, lam, core.real.copy(), (lam * core).real.copy(),
                            (core / lam).real.copy(), nonsmooth)


# ---------------------------------------------------------------------------
# Penalized objective
# ---------------------------------------------------------------------------

def objective_with_penalty(sys, gains, t: float, opts: SolverOpts | None = None) -> float:
    """``f + t * max(0, alpha(B Kd C) - 1)``; ``+inf`` when ``I - B Kd C`` is singular."""
    if not t > 0:
        raise ValueError("t must be positive")
    try:
        f = spectral_abscissa(assemble_pencil(sys, gains), opts)
    except DegeneratePencilError:
        return np.inf
    return float(f + t * max(0.0, alpha_bkdc(sys, gains.Kd) - 1.0))


@dataclass
class ObjectiveGradient:
    value: float
    grad: dict
    nonsmooth: bool
    penalty_active: bool


def grad_objective(sys, gains, t: float | None = None, opts: SolverOpts | None = None,
                   mask: dict | None = None) -> ObjectiveGradient:
    """Gradient of the (optionally penalized) objective over the free gain entries.

    Masked entries get gradient 0 and are reported as ``NaN`` so they are
    visibly absent.
    """
    ag = abscissa_gradient(sys, gains, opts)
    grad = {k: v.copy() for k, v in ag.as_dict().items()}
    value = ag.abscissa
    active = False
    if t is not None:
        a, da = _kdcb_eig(sys, gains.Kd, "alpha")
        if a > 1:
            active = True
            value += t * (a - 1)
            grad["Kd"] = grad["Kd"] + t * da
    if mask is not None:
        for k in GAIN_NAMES:
            if k in mask and mask[k] is not None:
                grad[k] = np.where(np.asarray(mask[k], dtype=bool), grad[k], np.nan)
    return ObjectiveGradient(value, grad, ag.nonsmooth, active)


# ---------------------------------------------------------------------------
# Parametrization
# ---------------------------------------------------------------------------

class _Params:
    def __init__(self, m, p, mask):
        self.m, self.p = m, p
        self.masks = {}
        for k in GAIN_NAMES:
            mk = None if mask is None else mask.get(k)
            self.masks[k] = np.ones((m, p), bool) if mk is None else np.asarray(mk, bool)
            if self.masks[k].shape != (m, p):
                raise ValueError(f"structure mask for {k} must be {m}x{p}")

    @property
    def size(self):
        return int(sum(mk.sum() for mk in self.masks.values()))

    def pack(self, gains):
        return np.concatenate([getattr(gains, k)[self.masks[k]] for k in GAIN_NAMES])

    def unpack(self, x, T=None):
        out, i = {}, 0
        for k in GAIN_NAMES:
            mk = self.masks[k]
            mat = np.zeros((self.m, self.p))
            cnt = int(mk.sum())
            mat[mk] = x[i:i + cnt]
            out[k] = mat
            i += cnt
        return PidGains(out["Kp"], out["Kd"], out["Ki"], T)

    def pack_grad(self, grad):
        return np.concatenate([grad[k][self.masks[k]] for k in GAIN_NAMES])


def rescale_kd(sys, gains, target: float = 0.9, which: str = "alpha") -> PidGains:
    """Scale ``Kd`` by ``target/alpha`` (or ``target/rho``) when that value exceeds ``target``."""
    val = alpha_bkdc(sys, gains.Kd) if which == "alpha" else rho_bkdc(sys, gains.Kd)
    if val > target:
        return gains.replace(Kd=gains.Kd * (target / val))
    return gains


def _make_fg(sys, params, opts, constraint, weight, design_opts):
    def fg(x):
        gains = params.unpack(x)
        try:
            ag = abscissa_gradient(sys, gains, opts, design_opts.candidates)
        except (DegeneratePencilError, ValueError, np.linalg.LinAlgError):
            return np.inf, np.zeros_like(x)
        f = ag.abscissa
        grad = ag.as_dict()
        if constraint == "alpha" and weight > 0:
            a, da = _kdcb_eig(sys, gains.Kd, "alpha")
            if a > 1:
                f += weight * (a - 1)
                grad = dict(grad, Kd=grad["Kd"] + weight * da)
        elif constraint == "rho":
            r, dr = _kdcb_eig(sys, gains.Kd, "rho")
            if r >= 1:
                return np.inf, np.zeros_like(x)
            f += -weight * np.log(1 - r)
            grad = dict(grad, Kd=grad["Kd"] + weight * dr / (1 - r))
        return float(f), params.pack_grad(grad)
    return fg


def _initial(params, dopts, index, sys):
    rng = np.random.default_rng(dopts.seed + index)
    if index == 0 and dopts.initial is not None:
        g0 = dopts.initial
        if g0.shape != (sys.m, sys.p):
            raise ValueError(f"initial gains are {g0.shape}, system needs {(sys.m, sys.p)}")
        x0 = params.pack(g0)
    else:
        x0 = rng.standard_normal(params.size)
    return x0, rng


def _run_start(sys, dopts, params, index):
    x0, rng = _initial(params, dopts, index, sys)
    opts = dopts.solver
    gains = params.unpack(x0)
    if dopts.rescale:
        gains = rescale_kd(sys, gains)
    x = params.pack(gains)
    t = dopts.t_penalty if dopts.constrained else 0.0
    trace, iters, msg = [], 0, ""
    for esc in range(dopts.escalations + 1):
        res = minimize(_make_fg(sys, params, opts, "alpha", t, dopts), x,
                       max_iters=dopts.max_iters, step_tol=dopts.step_tol, rng=rng)
        x, trace, iters, msg = res.x, trace + res.trace, iters + res.iterations, res.message
        if not dopts.constrained or alpha_bkdc(sys, params.unpack(x).Kd) < 1:
            break
        if esc < dopts.escalations:
            t *= 10
    gains = params.unpack(x)
    return _record(sys, gains, index, iters, t, trace, msg, dopts, "alpha"), gains


def _record(sys, gains, index, iters, t, trace, msg, dopts, constraint):
    try:
        f = spectral_abscissa(assemble_pencil(sys, gains), dopts.verify)
    except DegeneratePencilError:
        f = np.inf
    c = alpha_bkdc(sys, gains.Kd) if constraint == "alpha" else rho_bkdc(sys, gains.Kd)
    feasible = bool(f < 0 and c < 1)
    return StartRecord(index, float(f), float(c), feasible, iters, float(t), trace, msg)


def _finish(sys, dopts, runs, constraint):
    records = [r for r, _ in runs]
    feas = [i for i, r in enumerate(records) if r.feasible]
    if feas:
        best = min(feas, key=lambda i: (records[i].objective, i))
    else:
        best = min(range(len(records)),
                   key=lambda i: (records[i].objective + max(0.0, records[i].alpha_constraint - 1), i))
    rec, gains = runs[best]
    T = None
    if rec.feasible and dopts.select_T:
        T, _ = select_T(sys, gains, dopts.verify)
        gains = gains.replace(T=T)
    return DesignResult(gains, rec.objective, rec.alpha_constraint, T, rec.trace, rec.feasible,
                        records, best, constraint)


def design_pid(sys, opts: DesignOpts | None = None) -> DesignResult:
    """Multistart penalty-method design of a strongly stabilizing PID controller."""
    dopts = opts or DesignOpts()
    params = _Params(sys.m, sys.p, dopts.structure_mask)
    if params.size == 0:
        raise ValueError("structure mask leaves no free gain entries")
    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        runs = list(pool.map(lambda i: _run_start(sys, dopts, params, i), range(dopts.starts)))
    return _finish(sys, dopts, runs, "alpha")


def select_T(sys, gains, opts: SolverOpts | None = None, T0: float = 1e-2, T_min: float = 1e-12,
             rel: float = 0.05):
    """Largest ``T = T0 / 2^k`` whose filtered loop is stable with abscissa within ``rel`` of nominal.

    Returns ``(T, abscissa)``.
    """
    a_bkdc = alpha_bkdc(sys, gains.Kd)
    if not a_bkdc < 1:
        raise ValueError(f"alpha(B Kd C) = {a_bkdc:.6g} >= 1: no low-pass filter yields strong "
                         "stability")
    a0 = spectral_abscissa(assemble_pencil(sys, gains), opts)
    if not a0 < 0:
        raise ValueError(f"nominal closed loop is not stable (abscissa {a0:.6g})")
    T = T0
    while T >= T_min:
        try:
            a = spectral_abscissa(assemble_pencil(sys, gains, LoopConfig.low_pass(T)), opts)
        except (DegeneratePencilError, ZeroDivisionError):
            a = np.inf
        if a < 0 and a <= a0 + rel * abs(a0):
            return T, float(a)
        T /= 2
    raise ValueError("no cut-off T >= 1e-12 accepted; alpha(B Kd C) is probably too close to 1")


def _run_barrier_start(sys, dopts, params, index):
    x0, rng = _initial(params, dopts, index, sys)
    gains = rescale_kd(sys, params.unpack(x0), which="rho")
    x = params.pack(gains)
    mu = dopts.mu0
    trace, iters, msg = [], 0, ""
    for _ in range(dopts.barrier_loops):
        res = minimize(_make_fg(sys, params, dopts.solver, "rho", mu, dopts), x,
                       max_iters=dopts.max_iters, step_tol=dopts.step_tol, rng=rng)
        if np.isfinite(res.f):
            x = res.x
        trace, iters, msg = trace + res.trace, iters + res.iterations, res.message
        mu *= 0.1
    gains = params.unpack(x)
    return _record(sys, gains, index, iters, mu * 10, trace, msg, dopts, "rho"), gains


def design_input_delay(sys, opts: DesignOpts | None = None) -> DesignResult:
    """Design for a plant with input delay, keeping ``rho(B Kd C) < 1`` by a log barrier.

    ``rho < 1`` is necessary for stability of the loop with input delay; the
    barrier ``-mu log(1 - rho)`` keeps every iterate inside, with ``mu`` cut
    tenfold per outer loop.  A zero input delay falls back to :func:`design_pid`.
    """
    dopts = opts or DesignOpts()
    if not (sys.input_delay and sys.input_delay > 0):
        return design_pid(sys, dopts)
    params = _Params(sys.m, sys.p, dopts.structure_mask)
    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        runs = list(pool.map(lambda i: _run_barrier_start(sys, dopts, params, i),
                             range(dopts.starts)))
    return _finish(sys, dopts, runs, "rho")
