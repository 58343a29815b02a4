"""Algebraic fragility and strong-stability tests, plus the third-order example analytics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import catalog
from .model import DelaySystem, PidGains, assemble_pencil
from .spectra import (BoundaryRootError, DegeneratePencilError, SolverOpts, count_rhp_roots,
                      spectral_abscissa)

HURWITZ_MARGIN = 1e-9


# ---------------------------------------------------------------------------
# Region S
# ---------------------------------------------------------------------------

def in_clos_S(lam) -> bool:
    """Membership of ``lam`` in the closure of ``S = {Re(z) < Im(z) cot(Im(z)), |Im(z)| < pi}``.

    At ``Im = 0`` the bound is its limit 1; as ``|Im| -> pi`` it tends to
    ``-inf``, so points with ``|Im| >= pi`` are outside.
    """
    lam = complex(lam)
    y = abs(lam.imag)
    if y >= np.pi:
        return False
    bound = 1.0 if y == 0 else y / np.tan(y)
    return lam.real <= bound


# ---------------------------------------------------------------------------
# Eigenvalues of B Kd C
# ---------------------------------------------------------------------------

def bkdc_eigs(sys: DelaySystem, Kd) -> np.ndarray:
    """Eigenvalues of ``B Kd C`` from the ``m x m`` product ``Kd C B`` padded with ``n - m`` zeros."""
    Kd = np.atleast_2d(np.asarray(Kd, dtype=float))
    small = np.linalg.eigvals(Kd @ sys.C @ sys.B)
    pad = max(sys.n - sys.m, 0)
    return np.concatenate([small, np.zeros(pad, dtype=complex)])


def _nominal_abscissa(sys, gains, opts):
    try:
        return spectral_abscissa(assemble_pencil(sys, gains), opts)
    except DegeneratePencilError:
        return np.inf


@dataclass
class FragilityReport:
    rho_BKdC: float
    alpha_BKdC: float
    eig_BKdC: list
    delay_fragile: bool
    fd_fragile: bool
    lowpass_destabilizing: bool
    cb_zero: bool
    strong_with_filter: bool
    nominal_stable: bool
    nominal_abscissa: float = np.nan
    inconclusive: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eig_BKdC"] = [[float(z.real), float(z.imag)] for z in self.eig_BKdC]
        return d


def fragility_report(sys: DelaySystem, gains: PidGains, opts: SolverOpts | None = None
                     ) -> FragilityReport:
    """Evaluate every derivative-gain fragility condition for a PID loop.

    - delay-fragile: ``rho(B Kd C) > 1`` (arbitrarily small feedback delay destabilizes)
    - fd-fragile: an eigenvalue of ``B Kd C`` outside ``clos(S)``
    - low-pass destabilizing: an eigenvalue with real part above 1
    - strong with filter: stable nominal loop and ``alpha(B Kd C) < 1``
    """
    eigs = bkdc_eigs(sys, gains.Kd)
    rho = float(np.max(np.abs(eigs)))
    alpha = float(np.max(eigs.real))
    absc = _nominal_abscissa(sys, gains, opts)
    stable = bool(absc < 0)
    CB = sys.C @ sys.B
    cb_zero = bool(np.linalg.norm(CB) <= 1e-14 * max(1.0, np.linalg.norm(sys.C) * np.linalg.norm(sys.B)))
    inconclusive = []
    if abs(rho - 1) <= HURWITZ_MARGIN:
        inconclusive.append("rho(B Kd C) = 1: feedback-delay robustness undetermined")
    if abs(alpha - 1) <= HURWITZ_MARGIN:
        inconclusive.append("alpha(B Kd C) = 1: low-pass filter effect undetermined")
    return FragilityReport(
        rho_BKdC=rho,
        alpha_BKdC=alpha,
        eig_BKdC=list(eigs),
        delay_fragile=bool(rho > 1 + HURWITZ_MARGIN),
        fd_fragile=bool(not all(in_clos_S(z) for z in eigs)),
        lowpass_destabilizing=bool(alpha > 1 + HURWITZ_MARGIN),
        cb_zero=cb_zero,
        strong_with_filter=bool(stable and alpha <= 1 - HURWITZ_MARGIN),
        nominal_stable=stable,
        nominal_abscissa=float(absc),
        inconclusive=inconclusive,
    )


def odd_number_limitation(sys: DelaySystem, Kp, Ki, opts=None) -> bool:
    """True when the ``Kd = 0`` loop has an odd number of closed right half-plane roots.

    Then no derivative gain gives a strongly stable loop with low-pass filtering.
    """
    Kp = np.atleast_2d(np.asarray(Kp, dtype=float))
    Ki = np.zeros_like(Kp) if Ki is None else np.atleast_2d(np.asarray(Ki, dtype=float))
    gains = PidGains(Kp, np.zeros_like(Kp), Ki)
    P = assemble_pencil(sys, gains)
    try:
        count = count_rhp_roots(P)
    except BoundaryRootError:
        raise ValueError("boundary case, limitation test inconclusive: the Kd = 0 loop "
                         "has a root on the imaginary axis") from None
    return count % 2 == 1


# ---------------------------------------------------------------------------
# Routh-Hurwitz
# ---------------------------------------------------------------------------

def routh_hurwitz(coeffs, degree: int | None = None):
    """Hurwitz test for cubics and quartics; ``coeffs`` runs from the leading term down.

    Returns ``(stable, conditions)``.  For a quartic ``a4 s^4 + ... + a0`` the
    conditions are ``a3 > 0, a2 > 0, a1 > 0, a0 > 0, a3 a2 - a4 a1 > 0`` and
    ``a3 a2 a1 - a4 a1^2 - a3^2 a0 > 0`` (after making ``a4`` positive); for a
    cubic ``a2 > 0, a1 > 0, a0 > 0, a2 a1 - a3 a0 > 0``.
    """
    c = [float(v) for v in coeffs]
    if degree is None:
        degree = len(c) - 1
    if degree not in (3, 4) or len(c) != degree + 1:
        raise ValueError("routh_hurwitz supports degree 3 or 4 with degree+1 coefficients")
    if c[0] == 0:
        raise ValueError("leading coefficient must be nonzero")
    if c[0] < 0:
        c = [-v for v in c]
    if degree == 3:
        a3, a2, a1, a0 = c
        conds = [a2 > 0, a1 > 0, a0 > 0, a2 * a1 - a3 * a0 > 0]
    else:
        a4, a3, a2, a1, a0 = c
        conds = [a3 > 0, a2 > 0, a1 > 0, a0 > 0,
                 a3 * a2 - a4 * a1 > 0,
                 a3 * a2 * a1 - a4 * a1**2 - a3**2 * a0 > 0]
    return all(conds), conds


def routh_rhp_count(coeffs) -> int:
    """Sign changes in the first Routh column (regular case only)."""
    c = [float(v) for v in coeffs]
    while c and c[0] == 0:
        c.pop(0)
    n = len(c) - 1
    rows = [c[0::2], c[1::2]]
    width = len(rows[0])
    rows = [r + [0.0] * (width - len(r)) for r in rows]
    for _ in range(n - 1):
        a, b = rows[-2], rows[-1]
        if b[0] == 0:
            raise ZeroDivisionError("singular Routh array (root on or symmetric about the axis)")
        new = [(b[0] * a[j + 1] - a[0] * b[j + 1]) / b[0] for j in range(width - 1)] + [0.0]
        rows.append(new)
    first = [r[0] for r in rows[:n + 1]]
    if any(v == 0 for v in first):
        raise ZeroDivisionError("zero in first Routh column")
    return int(sum(np.sign(first[i]) != np.sign(first[i + 1]) for i in range(n)))


# ---------------------------------------------------------------------------
# Third-order example
# ---------------------------------------------------------------------------

def third_order_poly(kp: float, kd: float, ki: float = 0.0) -> list:
    """Closed-loop characteristic polynomial of the third-order plant, highest degree first.

    The plant is ``(s^2 + 1)/(s^3 + s^2 - s/3 - 1)``; with ``ki = 0`` the cubic
    is returned, otherwise the quartic ``s*den - (kd s^2 + kp s + ki)(s^2 + 1)``.
    """
    if ki == 0:
        return [1 - kd, 1 - kp, -kd - 1 / 3, -kp - 1]
    return [1 - kd, 1 - kp, -1 / 3 - ki - kd, -1 - kp, -ki]


def third_order_count(kp: float, kd: float) -> int | None:
    """Closed right half-plane root count from the explicit region inequalities.

    Returns ``None`` on a region boundary (``kd = 1``, ``kp = -1``, or the
    imaginary-axis crossing line ``kd = 1/3 + 2/3 kp`` outside ``-1 <= kp <= 1``).
    """
    line = 1 / 3 + 2 / 3 * kp
    if kd == 1 or kp == -1 or (abs(kp) > 1 and kd == line):
        return None
    if kd < 1:
        if kp > -1:
            return 1
        return 0 if kd < line else 2
    if kp < -1:
        return 3
    return 0 if (kp > 1 and kd < line) else 2


@dataclass(frozen=True)
class RegionLabel:
    kind: str  # StrongStable, RobustNoFilter, StableFragile or Unstable
    rhp_count: int | None = None
    boundary: bool = False

    def __str__(self):
        if self.kind != "Unstable":
            return self.kind
        if self.boundary:
            return "Unstable(boundary)"
        return f"Unstable({self.rhp_count})"


def third_order_region(kp: float, kd: float) -> RegionLabel:
    """Classify a PD controller for the third-order plant by the explicit region inequalities."""
    line = 1 / 3 + 2 / 3 * kp
    stable = (kd < 1 and kp < -1 and kd < line) or (kd > 1 and kp > 1 and kd < line)
    if stable:
        if kp < -1 and kd < line:
            return RegionLabel("RobustNoFilter" if kd > -1 else "StrongStable")
        return RegionLabel("StableFragile")
    if third_order_count(kp, kd) is None:
        return RegionLabel("Unstable", None, boundary=True)
    P = assemble_pencil(catalog.third_order(), PidGains.siso(kp, kd))
    return RegionLabel("Unstable", count_rhp_roots(P))


def crossing_frequency(kp: float) -> float | None:
    """Imaginary-axis crossing frequency ``sqrt((-kp - 1)/(1 - kp))`` of the third-order loop."""
    if kp == -1:
        return 0.0
    if -1 < kp <= 1:
        return None
    return float(np.sqrt((-kp - 1) / (1 - kp)))


def classify(sys: DelaySystem, gains: PidGains, opts: SolverOpts | None = None,
             report: FragilityReport | None = None) -> RegionLabel:
    """Stability/robustness label for a general loop, from its :class:`FragilityReport`."""
    rep = report or fragility_report(sys, gains, opts)
    if not rep.nominal_stable:
        count = None
        try:
            count = count_rhp_roots(assemble_pencil(sys, gains))
        except (ValueError, BoundaryRootError):
            pass
        return RegionLabel("Unstable", count)
    if not (rep.delay_fragile or rep.fd_fragile or rep.lowpass_destabilizing):
        return RegionLabel("RobustNoFilter")
    if rep.strong_with_filter:
        return RegionLabel("StrongStable")
    return RegionLabel("StableFragile")


def label_from_count(sys: DelaySystem, gains: PidGains, count: int | None) -> RegionLabel:
    """Same decision as :func:`classify` but with a known closed right half-plane root count."""
    if count is None:
        return RegionLabel("Unstable", None, boundary=True)
    if count > 0:
        return RegionLabel("Unstable", count)
    eigs = bkdc_eigs(sys, gains.Kd)
    rho, alpha = float(np.max(np.abs(eigs))), float(np.max(eigs.real))
    fragile = rho > 1 + HURWITZ_MARGIN or not all(in_clos_S(z) for z in eigs) \
        or alpha > 1 + HURWITZ_MARGIN
    if not fragile:
        return RegionLabel("RobustNoFilter")
    if alpha <= 1 - HURWITZ_MARGIN:
        return RegionLabel("StrongStable")
    return RegionLabel("StableFragile")


@dataclass
class RegionMap:
    """PD parameter-plane scan of a single-input single-output loop."""

    kp: np.ndarray
    kd: np.ndarray
    counts: np.ndarray  # shape (len(kp), len(kd)); -1 where the count is undetermined
    labels: list

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["kp", "kd", "rhp_count", "label"])
        for i, kp in enumerate(self.kp):
            for j, kd in enumerate(self.kd):
                c = int(self.counts[i, j])
                w.writerow([repr(float(kp)), repr(float(kd)), "" if c < 0 else c,
                            self.labels[i][j]])


def region_map(sys: DelaySystem, kp_grid, kd_grid, ki: float = 0.0) -> RegionMap:
    """Closed right half-plane root count and label at every ``(kp, kd)`` of a grid.

    Points whose loop has a root on (or numerically on) the imaginary axis, or a
    singular ``lam`` coefficient, get count ``-1`` and the label ``Unstable(boundary)``.
    """
    if sys.m != 1 or sys.p != 1:
        raise ValueError("region maps need a single-input single-output system")
    kp_grid = np.asarray(kp_grid, dtype=float)
    kd_grid = np.asarray(kd_grid, dtype=float)
    counts = np.full((kp_grid.size, kd_grid.size), -1, dtype=int)
    labels = []
    for i, kp in enumerate(kp_grid):
        row = []
        for j, kd in enumerate(kd_grid):
            gains = PidGains.siso(kp, kd, ki)
            try:
                c = count_rhp_roots(assemble_pencil(sys, gains))
            except (BoundaryRootError, DegeneratePencilError, ZeroDivisionError):
                c = None
            if c is not None:
                counts[i, j] = c
            row.append(str(label_from_count(sys, gains, c)))
        labels.append(row)
    return RegionMap(kp_grid, kd_grid, counts, labels)
