"""Perturbation families, assumption checks, perturbation-size sweeps and the scaled limit equation.

The scaled limit equation ``z - mu (1 - exp(-z)) = 0`` describes where the roots
of the finite-difference loop go as the step ``r -> 0`` (after scaling by
``r``); it has a root in the open right half-plane exactly when ``mu`` lies
outside ``clos(S)``.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import in_clos_S
from .model import PERTURBATION_KINDS, LoopConfig, PerturbationFn, assemble_pencil
from .spectra import SolverOpts, chain_abscissa, spectral_abscissa

DEFAULT_GRID = tuple(np.logspace(-4, -1, 13))

_VARIANT_ALIASES = {
    "fbdelay": "FeedbackDelay", "FeedbackDelay": "FeedbackDelay",
    "fd": "FiniteDifference", "FiniteDifference": "FiniteDifference",
    "lowpass": "LowPass", "LowPass": "LowPass",
}


def thread_cap() -> int:
    """Worker count from ``STRONGSTAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("STRONGSTAB_THREADS", "1")))
    except ValueError:
        return 1


def make_perturbation(kind: str, r: float, dim: int, fn=None) -> PerturbationFn:
    """Build a catalog perturbation ``s(lam; r) * I_dim``.

    ``kind`` is one of ``Identity``, ``DelayExp``, ``FiniteDiffKernel``,
    ``LowPassKernel`` or ``Custom`` (then ``fn(lam, r)`` supplies the scalar).
    """
    if kind not in PERTURBATION_KINDS:
        raise ValueError(f"unknown perturbation kind {kind!r}; expected one of {PERTURBATION_KINDS}")
    return PerturbationFn(kind, float(r), int(dim), fn)


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    """Numerical evidence for the perturbation assumptions (items 3-5).

    Item 1 (meromorphy / continuity) cannot be checked by sampling and is not
    attempted.
    """

    identity_at_zero: bool
    r_grid: list
    max_deviation: list
    deviation_decreasing: bool
    bound_M: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def default_lam_grid(N_halfplane: float, im_max: float = 50.0, re_max: float = 10.0):
    re = np.linspace(-N_halfplane, re_max, 41)
    im = np.linspace(-im_max, im_max, 101)
    return (re[:, None] + 1j * im[None, :]).ravel()


def verify_assumptions(R: PerturbationFn, N_halfplane: float = 1.0, r_grid=None,
                       lam_grid=None, tol: float = 1e-12) -> AssumptionReport:
    """Sample items 3-5 of the perturbation assumption for the family of ``R``.

    ``max_deviation[k]`` is ``max ||R(lam; r_k) - I||`` over ``lam_grid`` (should
    shrink as ``r -> 0``); ``bound_M`` is the largest ``||R(lam; r)||`` seen on
    ``Re(lam) >= -N_halfplane``.
    """
    if r_grid is None:
        r_grid = np.logspace(-4, -1, 7)
    r_grid = np.sort(np.asarray(r_grid, dtype=float))
    if lam_grid is None:
        lam_grid = default_lam_grid(N_halfplane)
    lam_grid = np.asarray(lam_grid, dtype=complex).ravel()
    if r_grid.size == 0 or lam_grid.size == 0:
        raise ValueError("grids must be nonempty")
    lam_half = lam_grid[lam_grid.real >= -N_halfplane]
    violations = []

    def family(r):
        return PerturbationFn(R.kind, float(r), R.dim, R.fn)

    # scalar times identity: the spectral norm of R - I is |s - 1|
    at_zero = np.abs(family(0.0).scalar(lam_grid) - 1)
    identity_ok = bool(np.max(at_zero) <= tol)
    if not identity_ok:
        violations.append("item 3: R(lam; 0) differs from the identity")
    devs, bound = [], 0.0
    for r in r_grid:
        with np.errstate(all="ignore"):
            s = family(r).scalar(lam_grid)
            sh = family(r).scalar(lam_half) if lam_half.size else np.zeros(0)
        devs.append(float(np.max(np.abs(s - 1))))
        if sh.size:
            bound = max(bound, float(np.max(np.abs(sh))))
    devs_arr = np.asarray(devs)
    decreasing = bool(np.all(np.diff(devs_arr) >= -1e-12 * np.maximum(1.0, devs_arr[1:])))
    if not decreasing:
        violations.append("item 4: deviation from I does not shrink monotonically as r -> 0")
    if not np.isfinite(bound):
        violations.append("item 5: R unbounded on the sampled half-plane")
    return AssumptionReport(identity_ok, list(map(float, r_grid)), devs, decreasing, bound,
                            violations)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    variant: str
    grid: np.ndarray
    abscissa: np.ndarray
    stable: np.ndarray
    chain_prediction: np.ndarray | None = None
    errors: dict = field(default_factory=dict)

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["r", "abscissa", "stable", "chain_prediction"])
        for k, r in enumerate(self.grid):
            chain = "" if self.chain_prediction is None else repr(float(self.chain_prediction[k]))
            a = self.abscissa[k]
            w.writerow([repr(float(r)), "" if np.isnan(a) else repr(float(a)),
                        "true" if self.stable[k] else "false", chain])


def _loop_config(variant, r):
    if variant == "FeedbackDelay":
        return LoopConfig.feedback_delay(r)
    if variant == "FiniteDifference":
        return LoopConfig.finite_difference(r)
    return LoopConfig.low_pass(r)


def sweep(sys, gains, variant: str, grid=None, opts: SolverOpts | None = None) -> SweepResult:
    """Spectral abscissa of the perturbed loop at every perturbation size in ``grid``.

    Failed points are recorded in ``errors`` (by grid index) with a NaN abscissa.
    """
    try:
        variant = _VARIANT_ALIASES[variant]
    except KeyError:
        raise ValueError(f"sweep variant must be one of {sorted(set(_VARIANT_ALIASES))}") from None
    grid = np.asarray(DEFAULT_GRID if grid is None else grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("sweep grid must be positive and strictly increasing")
    assemble_pencil(sys, gains)  # fail early on inconsistent dimensions

    def point(r):
        try:
            P = assemble_pencil(sys, gains, _loop_config(variant, float(r)))
            return spectral_abscissa(P, opts), None
        except (ValueError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
            return np.nan, str(exc)

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        results = list(pool.map(point, grid))
    absc = np.array([a for a, _ in results], dtype=float)
    errors = {k: e for k, (_, e) in enumerate(results) if e is not None}
    chain = None
    if variant == "FeedbackDelay" and np.any(sys.B @ gains.Kd @ sys.C):
        try:
            chain = np.array([chain_abscissa(sys, gains, r) for r in grid])
        except ValueError:
            chain = None
    return SweepResult(variant, grid, absc, absc < 0, chain, errors)


# ---------------------------------------------------------------------------
# Scaled limit equation
# ---------------------------------------------------------------------------

def _g(z, mu):
    return z - mu * (1 - np.exp(-z)), 1 - mu * np.exp(-z)


def _newton_scalar(z, mu, max_iter=100):
    for _ in range(max_iter):
        g, dg = _g(z, mu)
        if dg == 0 or not np.isfinite(g):
            return None
        step = g / dg
        # damping keeps the iterate from jumping across the imaginary axis
        lim = max(1.0, 0.5 * abs(z))
        if abs(step) > lim:
            step *= lim / abs(step)
        z = z - step
        if abs(step) <= 1e-15 * max(1.0, abs(z)):
            break
    g, _ = _g(z, mu)
    if abs(g) <= 1e-11 * max(1.0, abs(mu)):
        return z
    return None


def _bisect_real(mu):
    # real mu > 1: g(0+) < 0 < g(mu)
    lo, hi = 1e-12 * mu, float(mu)
    while _g(lo, mu)[0].real >= 0:
        lo *= 1e-3
        if lo < 1e-300:
            return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _g(mid, mu)[0].real < 0:
            lo = mid
        else:
            hi = mid
    return complex(0.5 * (lo + hi), 0.0)


def limit_root(mu: complex) -> complex | None:
    """Open right half-plane root of ``z = mu (1 - exp(-z))``, or ``None`` if there is none."""
    mu = complex(mu)
    if in_clos_S(mu):
        return None

    def good(z):
        return z is not None and z.real > 1e-10

    z = _newton_scalar(mu, mu)
    if good(z):
        return z
    if mu.imag == 0:
        z = _bisect_real(mu.real)
        if good(z):
            return z
    # every open-RHP root satisfies |z| <= 2|mu|
    rad = 2 * abs(mu)
    for rr in np.linspace(0.1, 1.0, 6) * rad:
        for th in np.linspace(-np.pi / 2, np.pi / 2, 13)[1:-1]:
            z = _newton_scalar(rr * np.exp(1j * th), mu)
            if good(z):
                return z
    raise RuntimeError(f"scaled limit equation for mu = {mu} should have a right half-plane "
                       "root but none was found")


def scaled_limit_roots(eigs) -> list:
    """Pair each eigenvalue ``mu`` with its open right half-plane limit root (or ``None``)."""
    return [(complex(mu), limit_root(mu)) for mu in np.atleast_1d(eigs)]
