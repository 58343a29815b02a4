"""Plants, PID gains, loop configurations and closed-loop characteristic functions.

A closed-loop characteristic function is stored as a :class:`CharacteristicPencil`,
a sum of constant matrices times scalar shape functions of ``lam``::

    F(lam) = sum_j  M_j * s_j(lam)

Each shape ``s_j`` is a product of elementary factors (``lam``, ``exp(-lam*h)``,
the finite-difference kernel ``(1 - exp(-lam*r))/(lam*r)`` and the low-pass
factor ``1/(lam*T + 1)``).  The closed-loop roots are the zeros of ``det F``.

Integral action always enters through the ``(n+q)``-dimensional augmentation
with a rank factorization ``Ki = Ui @ Vi``; ``1/lam`` never appears.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RANK_TOL = 1e-10
TAYLOR_CUTOFF = 1e-4


class LoadError(ValueError):
    """Raised when a system or gains file is malformed or violates an invariant."""


class PoleError(ZeroDivisionError):
    """Raised when a shape function is evaluated exactly at one of its poles."""


# ---------------------------------------------------------------------------
# Shape functions
# ---------------------------------------------------------------------------

def _fd_kernel(z):
    # (1 - exp(-z))/z, with a 6-term Taylor series near the removable singularity
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < TAYLOR_CUTOFF
    out = np.empty_like(z)
    zs = z[small]
    out[small] = 1 - zs / 2 + zs**2 / 6 - zs**3 / 24 + zs**4 / 120 - zs**5 / 720
    zl = z[~small]
    out[~small] = -np.expm1(-zl) / zl
    return out


def _fd_kernel_deriv(z):
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < TAYLOR_CUTOFF
    out = np.empty_like(z)
    zs = z[small]
    out[small] = -1 / 2 + zs / 3 - zs**2 / 8 + zs**3 / 30 - zs**4 / 144 + zs**5 / 840
    zl = z[~small]
    out[~small] = (np.exp(-zl) * (zl + 1) - 1) / zl**2
    return out


def _check_poles(den):
    if np.any(den == 0):
        raise PoleError("shape function evaluated at its pole lam = -1/T")


@dataclass(frozen=True)
class Factor:
    """One elementary scalar factor of a shape function.

    ``kind`` is one of ``"lam"``, ``"exp"`` (``exp(-lam*param)``), ``"fd"``
    (finite-difference kernel with step ``param``), ``"lp"`` (``1/(lam*param+1)``)
    or ``"custom"`` (user callable ``fn(lam, param)``; evaluation only).
    """

    kind: str
    param: float = 0.0
    fn: object = field(default=None, repr=False)
    dfn: object = field(default=None, repr=False)

    def is_identity(self) -> bool:
        return self.kind in ("exp", "fd", "lp") and self.param == 0.0

    def value(self, lam):
        lam = np.asarray(lam, dtype=complex)
        if self.kind == "lam":
            return lam
        if self.kind == "exp":
            return np.exp(-lam * self.param)
        if self.kind == "fd":
            return _fd_kernel(lam * self.param)
        if self.kind == "lp":
            den = lam * self.param + 1
            _check_poles(den)
            return 1 / den
        return np.asarray(self.fn(lam, self.param), dtype=complex)

    def deriv(self, lam):
        lam = np.asarray(lam, dtype=complex)
        if self.kind == "lam":
            return np.ones_like(lam)
        if self.kind == "exp":
            return -self.param * np.exp(-lam * self.param)
        if self.kind == "fd":
            return self.param * _fd_kernel_deriv(lam * self.param)
        if self.kind == "lp":
            den = lam * self.param + 1
            _check_poles(den)
            return -self.param / den**2
        if self.dfn is None:
            h = 1e-7 * np.maximum(1.0, np.abs(lam))
            return (self.fn(lam + h, self.param) - self.fn(lam - h, self.param)) / (2 * h)
        return np.asarray(self.dfn(lam, self.param), dtype=complex)

    def _sort_key(self):
        order = {"lam": 0, "exp": 1, "fd": 2, "lp": 3, "custom": 4}
        return (order[self.kind], self.param, id(self.fn) if self.kind == "custom" else 0)

    def __str__(self):
        if self.kind == "lam":
            return "lam"
        if self.kind == "exp":
            return f"exp(-lam*{self.param:g})"
        if self.kind == "fd":
            return f"fd({self.param:g})"
        if self.kind == "lp":
            return f"1/(lam*{self.param:g}+1)"
        return f"custom({self.param:g})"


LAM = Factor("lam")


@dataclass(frozen=True)
class Shape:
    """Product of :class:`Factor` objects; the empty product is the constant 1."""

    factors: tuple = ()

    def __post_init__(self):
        kept = tuple(sorted((f for f in self.factors if not f.is_identity()),
                            key=Factor._sort_key))
        object.__setattr__(self, "factors", kept)

    def __mul__(self, other: "Shape") -> "Shape":
        return Shape(self.factors + other.factors)

    @property
    def lam_power(self) -> int:
        return sum(f.kind == "lam" for f in self.factors)

    def __call__(self, lam):
        out = np.ones_like(np.asarray(lam, dtype=complex))
        for f in self.factors:
            out = out * f.value(lam)
        return out

    def deriv(self, lam):
        lam = np.asarray(lam, dtype=complex)
        vals = [f.value(lam) for f in self.factors]
        total = np.zeros_like(lam)
        for i, f in enumerate(self.factors):
            term = f.deriv(lam)
            for j, v in enumerate(vals):
                if j != i:
                    term = term * v
            total = total + term
        return total

    def expand(self):
        """Rewrite as ``sum c * lam**a * exp(-lam*h)`` times low-pass factors.

        Returns ``(terms, Ts)`` where ``terms`` maps ``(a, h)`` to ``c`` and
        ``Ts`` lists the low-pass time constants.  Raises ``ValueError`` when the
        shape has no delay-equation form (custom factors, or a leftover ``1/lam``).
        """
        terms = {(0, 0.0): 1.0}
        Ts = []
        for f in self.factors:
            if f.kind == "lam":
                mult = {(1, 0.0): 1.0}
            elif f.kind == "exp":
                mult = {(0, f.param): 1.0}
            elif f.kind == "fd":
                mult = {(-1, 0.0): 1.0 / f.param, (-1, f.param): -1.0 / f.param}
            elif f.kind == "lp":
                Ts.append(f.param)
                continue
            else:
                raise ValueError("custom shape factors cannot be discretized")
            new = {}
            for (a1, h1), c1 in terms.items():
                for (a2, h2), c2 in mult.items():
                    key = (a1 + a2, h1 + h2)
                    new[key] = new.get(key, 0.0) + c1 * c2
            terms = new
        if any(a not in (0, 1) for a, _ in terms):
            raise ValueError(f"shape {self} has no first-order delay-equation form")
        return terms, tuple(Ts)

    def rhp_bound(self):
        """Bound on ``|s(lam)|`` for ``Re(lam) >= 0``, ignoring a bare ``lam``.

        Returns ``(has_lam, bound)``.  With a ``lam`` factor the bound covers the
        whole shape if a low-pass or finite-difference factor tames it (then
        ``has_lam`` is False); otherwise ``bound`` multiplies ``|lam|``.
        """
        if any(f.kind == "custom" for f in self.factors):
            return False, np.inf
        if self.lam_power == 0:
            return False, 1.0
        tames = [2.0 / f.param for f in self.factors if f.kind in ("lp", "fd")]
        if tames:
            return False, min(tames)
        return True, 1.0

    def __str__(self):
        return "*".join(str(f) for f in self.factors) or "1"


def shape(*factors) -> Shape:
    return Shape(tuple(factors))


# ---------------------------------------------------------------------------
# Plant and controller
# ---------------------------------------------------------------------------

def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DelaySystem:
    """LTI system with discrete state delays and an optional input delay.

    ``A`` holds ``A0, A1, ..., AK``; ``delays`` holds ``tau_1 < ... < tau_K``.
    """

    A: tuple
    delays: tuple
    B: np.ndarray
    C: np.ndarray
    input_delay: float | None = None

    def __post_init__(self):
        A = tuple(_frozen(np.atleast_2d(a)) for a in self.A)
        if not A:
            raise LoadError("at least A0 is required")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "delays", tuple(float(t) for t in self.delays))
        object.__setattr__(self, "B", _frozen(np.atleast_2d(self.B)))
        object.__setattr__(self, "C", _frozen(np.atleast_2d(self.C)))
        n = A[0].shape[0]
        for k, a in enumerate(A):
            if a.shape != (n, n):
                raise LoadError(f"A{k} has shape {a.shape}, expected ({n}, {n})")
        if len(self.delays) != len(A) - 1:
            raise LoadError(f"{len(A) - 1} delayed matrices but {len(self.delays)} delays")
        d = np.asarray(self.delays)
        if np.any(d <= 0):
            raise LoadError("delays must be positive")
        if np.any(np.diff(d) <= 0):
            raise LoadError(f"delays not strictly increasing: {self.delays}")
        if self.B.shape[0] != n:
            raise LoadError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise LoadError(f"C has {self.C.shape[1]} columns, expected {n}")
        if np.linalg.matrix_rank(self.B) < self.m:
            raise LoadError("B must have full column rank")
        if np.linalg.matrix_rank(self.C) < self.p:
            raise LoadError("C must have full row rank")
        if self.input_delay is not None:
            if self.input_delay < 0:
                raise LoadError("input_delay must be nonnegative")
            object.__setattr__(self, "input_delay", float(self.input_delay))

    n = property(lambda self: self.A[0].shape[0])
    m = property(lambda self: self.B.shape[1])
    p = property(lambda self: self.C.shape[0])
    K = property(lambda self: len(self.delays))

    def replace(self, **changes) -> "DelaySystem":
        kw = dict(A=self.A, delays=self.delays, B=self.B, C=self.C,
                  input_delay=self.input_delay)
        kw.update(changes)
        return DelaySystem(**kw)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "m": self.m, "p": self.p,
            "A": [a.tolist() for a in self.A],
            "delays": list(self.delays),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "input_delay": self.input_delay,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DelaySystem":
        for key in ("n", "m", "p", "A", "delays", "B", "C"):
            if key not in data:
                raise LoadError(f"missing key {key!r}")
        try:
            A = [np.array(a, dtype=float) for a in data["A"]]
            B = np.array(data["B"], dtype=float)
            C = np.array(data["C"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise LoadError(f"malformed matrix: {exc}") from None
        if any(a.ndim != 2 for a in A) or B.ndim != 2 or C.ndim != 2:
            raise LoadError("matrices must be arrays of row arrays")
        sys = cls(A=tuple(A), delays=tuple(data["delays"]), B=B, C=C,
                  input_delay=data.get("input_delay"))
        declared = (data["n"], data["m"], data["p"])
        if declared != (sys.n, sys.m, sys.p):
            raise LoadError(f"declared (n, m, p) = {declared} but matrices give "
                            f"{(sys.n, sys.m, sys.p)}")
        return sys


def load_system(path) -> DelaySystem:
    """Read and validate a system file (JSON schema documented in the README)."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise LoadError(f"{path}: top level must be an object")
    try:
        return DelaySystem.from_dict(data)
    except LoadError as exc:
        raise LoadError(f"{path}: {exc}") from None


def rank_factorize(Ki, tol: float = RANK_TOL):
    """Rank-revealing factorization ``Ki = Ui @ Vi``.

    The rank ``q`` counts singular values above ``tol * sigma_max``; the
    singular values are split evenly between the two factors.
    """
    Ki = np.atleast_2d(np.asarray(Ki, dtype=float))
    m, p = Ki.shape
    if Ki.size == 0 or not np.any(Ki):
        return np.zeros((m, 0)), np.zeros((0, p)), 0
    U, s, Vt = np.linalg.svd(Ki, full_matrices=False)
    q = int(np.sum(s > tol * s[0]))
    root = np.sqrt(s[:q])
    return U[:, :q] * root, root[:, None] * Vt[:q], q


@dataclass(frozen=True)
class PidGains:
    """PID gain matrices (each ``m x p``) and an optional low-pass constant ``T``."""

    Kp: np.ndarray
    Kd: np.ndarray
    Ki: np.ndarray
    T: float | None = None
    rank_tol: float = RANK_TOL
    Ui: np.ndarray = field(init=False, repr=False)
    Vi: np.ndarray = field(init=False, repr=False)
    rank_q: int = field(init=False)

    def __post_init__(self):
        Kp, Kd, Ki = (_frozen(np.atleast_2d(k)) for k in (self.Kp, self.Kd, self.Ki))
        if not Kp.shape == Kd.shape == Ki.shape:
            raise LoadError(f"gain shapes differ: {Kp.shape}, {Kd.shape}, {Ki.shape}")
        if self.T is not None and not self.T > 0:
            raise LoadError("filter constant T must be positive")
        Ui, Vi, q = rank_factorize(Ki, self.rank_tol)
        for name, val in (("Kp", Kp), ("Kd", Kd), ("Ki", Ki),
                          ("Ui", _frozen(Ui)), ("Vi", _frozen(Vi)), ("rank_q", q)):
            object.__setattr__(self, name, val)

    @property
    def shape(self):
        return self.Kp.shape

    @classmethod
    def zeros(cls, m: int, p: int, T=None) -> "PidGains":
        z = np.zeros((m, p))
        return cls(z, z, z, T)

    @classmethod
    def siso(cls, kp=0.0, kd=0.0, ki=0.0, T=None) -> "PidGains":
        return cls([[kp]], [[kd]], [[ki]], T)

    def replace(self, **changes) -> "PidGains":
        kw = dict(Kp=self.Kp, Kd=self.Kd, Ki=self.Ki, T=self.T, rank_tol=self.rank_tol)
        kw.update(changes)
        return PidGains(**kw)

    def to_dict(self) -> dict:
        return {"Kp": self.Kp.tolist(), "Kd": self.Kd.tolist(),
                "Ki": self.Ki.tolist(), "T": self.T}

    @classmethod
    def from_dict(cls, data: dict) -> "PidGains":
        for key in ("Kp", "Kd", "Ki"):
            if key not in data:
                raise LoadError(f"missing key {key!r}")
        try:
            return cls(np.array(data["Kp"], dtype=float), np.array(data["Kd"], dtype=float),
                       np.array(data["Ki"], dtype=float), data.get("T"))
        except (TypeError, ValueError) as exc:
            raise LoadError(f"malformed gains: {exc}") from None


def load_gains(path, sys: DelaySystem | None = None) -> PidGains:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON ({exc})") from None
    gains = PidGains.from_dict(data)
    if sys is not None and gains.shape != (sys.m, sys.p):
        raise LoadError(f"{path}: gains are {gains.shape}, system needs {(sys.m, sys.p)}")
    return gains


# ---------------------------------------------------------------------------
# Perturbations and loop configurations
# ---------------------------------------------------------------------------

PERTURBATION_KINDS = ("Identity", "DelayExp", "FiniteDiffKernel", "LowPassKernel", "Custom")


@dataclass(frozen=True)
class PerturbationFn:
    """Scalar-times-identity perturbation ``R(lam; r) = s(lam; r) * I_dim``.

    Build instances with :func:`strongstab.perturbation_lab.make_perturbation`.
    """

    kind: str
    r: float
    dim: int
    fn: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.r < 0:
            raise ValueError("perturbation size r must be nonnegative")
        if self.kind == "Custom" and self.fn is None:
            raise ValueError("Custom perturbations need a callable fn(lam, r)")

    @property
    def factor(self) -> Shape:
        if self.kind == "Identity":
            return Shape()
        if self.kind == "DelayExp":
            return shape(Factor("exp", self.r))
        if self.kind == "FiniteDiffKernel":
            return shape(Factor("fd", self.r))
        if self.kind == "LowPassKernel":
            return shape(Factor("lp", self.r))
        # user shapes are evaluated even at r = 0 so that item 3 can be checked
        return shape(Factor("custom", self.r, fn=self.fn))

    def scalar(self, lam):
        return self.factor(lam)

    def __call__(self, lam):
        s = np.asarray(self.scalar(lam))
        return s[..., None, None] * np.eye(self.dim)


VARIANTS = ("Nominal", "FeedbackDelay", "FiniteDifference", "LowPass",
            "GeneralPerturbed", "NoKdPerturbed", "InputDelay")


@dataclass(frozen=True)
class LoopConfig:
    """Which closed loop to assemble (H0 ... H6).  Use the classmethod constructors."""

    variant: str = "Nominal"
    r: float | None = None
    T: float | None = None
    R1: PerturbationFn | None = None
    R2: PerturbationFn | None = None
    R3: PerturbationFn | None = None
    tau_u: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loop variant {self.variant!r}")
        if self.variant in ("FeedbackDelay", "FiniteDifference") and not (self.r and self.r > 0):
            raise ValueError(f"{self.variant} needs r > 0")
        if self.variant in ("LowPass", "GeneralPerturbed") and not (self.T and self.T > 0):
            raise ValueError(f"{self.variant} needs T > 0")
        if self.T is not None and self.T <= 0:
            raise ValueError("T must be positive")
        if self.variant == "InputDelay" and (self.tau_u is None or self.tau_u < 0):
            raise ValueError("InputDelay needs tau_u >= 0")

    @classmethod
    def nominal(cls):
        return cls("Nominal")

    @classmethod
    def feedback_delay(cls, r):
        return cls("FeedbackDelay", r=r)

    @classmethod
    def finite_difference(cls, r):
        return cls("FiniteDifference", r=r)

    @classmethod
    def low_pass(cls, T):
        return cls("LowPass", T=T)

    @classmethod
    def general(cls, T, R1=None, R2=None, R3=None):
        return cls("GeneralPerturbed", T=T, R1=R1, R2=R2, R3=R3)

    @classmethod
    def no_kd(cls, R1=None, R2=None, R3=None):
        """Perturbed loop without a derivative filter (``Kd`` stays in the loop, unfiltered)."""
        return cls("NoKdPerturbed", R1=R1, R2=R2, R3=R3)

    @classmethod
    def input_delay(cls, tau_u, T=None, R1=None, R2=None, R3=None):
        return cls("InputDelay", T=T, R1=R1, R2=R2, R3=R3, tau_u=tau_u)


# ---------------------------------------------------------------------------
# Characteristic pencil
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CharacteristicPencil:
    """``F(lam) = sum_j M_j * s_j(lam)`` of size ``size x size``."""

    size: int
    terms: tuple
    label: str = ""

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=complex)
        out = np.zeros(lam.shape + (self.size, self.size), dtype=complex)
        for M, s in self.terms:
            out = out + np.asarray(s(lam))[..., None, None] * M
        return out

    def deriv(self, lam):
        lam = np.asarray(lam, dtype=complex)
        out = np.zeros(lam.shape + (self.size, self.size), dtype=complex)
        for M, s in self.terms:
            out = out + np.asarray(s.deriv(lam))[..., None, None] * M
        return out

    def scale(self, lam) -> float:
        """Backward-error scale ``sum_j |s_j(lam)| ||M_j||_F`` (an upper bound on ``||F(lam)||_F``)."""
        return float(sum(abs(complex(s(lam))) * np.linalg.norm(M) for M, s in self.terms))

    @property
    def is_real(self) -> bool:
        return all(np.isrealobj(M) for M, _ in self.terms)

    @property
    def delays(self) -> tuple:
        hs = set()
        for _, s in self.terms:
            for f in s.factors:
                if f.kind in ("exp", "fd", "custom"):
                    hs.add(f.param)
        return tuple(sorted(hs))

    def coefficient(self, shp: Shape) -> np.ndarray:
        """Matrix multiplying exactly the shape ``shp`` (zeros if absent)."""
        out = np.zeros((self.size, self.size))
        for M, s in self.terms:
            if s == shp:
                out = out + M
        return out

    def mass_matrix(self) -> np.ndarray:
        return self.coefficient(shape(LAM))

    def is_neutral(self) -> bool:
        for M, s in self.terms:
            has_lam, _ = s.rhp_bound()
            if has_lam and s.factors != (LAM,):
                return True
        return False

    def dde_form(self):
        """Rewrite as a first-order (possibly neutral) delay equation.

        Returns ``(d, coeffs)`` with ``coeffs[(a, h)]`` a ``d x d`` matrix such that
        the augmented function ``sum C_{a,h} lam**a exp(-lam*h)`` has the same
        finite roots as ``det F``.  Rational low-pass factors get ``rank(M)``
        auxiliary variables per factor; the first ``size`` unknowns are the
        original ones.
        """
        s0 = self.size
        plain = []
        rational = []
        for M, s in self.terms:
            pe, Ts = s.expand()
            if not Ts:
                plain.append((M, pe))
                continue
            U, sv, Vt = np.linalg.svd(M)
            rho = int(np.sum(sv > 1e-13 * max(sv[0], 1e-300)))
            if rho == 0:
                continue
            rational.append((U[:, :rho] * sv[:rho], Vt[:rho], pe, Ts))
        d = s0 + sum(L.shape[1] * len(Ts) for L, _, _, Ts in rational)
        dtype = complex if not self.is_real else float
        coeffs = {}

        def add(key, rows, cols, block):
            if key not in coeffs:
                coeffs[key] = np.zeros((d, d), dtype=dtype)
            coeffs[key][rows, cols] += block

        top = slice(0, s0)
        for M, pe in plain:
            for key, c in pe.items():
                add(key, top, top, c * M)
        offset = s0
        for L, R, pe, Ts in rational:
            rho = L.shape[1]
            prev = None
            for j, T in enumerate(Ts):
                w = slice(offset, offset + rho)
                eye = np.eye(rho)
                add((1, 0.0), w, w, T * eye)
                add((0, 0.0), w, w, eye)
                if j == 0:
                    for key, c in pe.items():
                        add(key, w, top, -c * R)
                else:
                    add((0, 0.0), w, prev, -eye)
                prev = w
                offset += rho
            add((0, 0.0), top, prev, L)
        return d, coeffs


def eval_pencil(P: CharacteristicPencil, lam):
    """Evaluate ``F(lam)``; removable singularities use their analytic limits."""
    return P(lam)


def _block(n, q, tl=None, tr=None, bl=None, br=None):
    M = np.zeros((n + q, n + q))
    if tl is not None:
        M[:n, :n] = tl
    if tr is not None and q:
        M[:n, n:] = tr
    if bl is not None and q:
        M[n:, :n] = bl
    if br is not None and q:
        M[n:, n:] = br
    return M


def _closed_loop(sys, gains, s1, s2, s3, s_in, s_f, label, with_kd=True):
    """Terms of H4/H5/H6 with scalar perturbations ``R_i = s_i * I``.

    ``s_in`` is the input-delay factor and ``s_f`` the low-pass factor of the
    derivative channel.
    """
    n, q = sys.n, gains.rank_q
    B, C = sys.B, sys.C
    ident = Shape()
    terms = [(_block(n, q, np.eye(n), br=np.eye(q)), shape(LAM)),
             (_block(n, q, -sys.A[0]), ident)]
    for Ak, tau in zip(sys.A[1:], sys.delays):
        terms.append((_block(n, q, -Ak), shape(Factor("exp", tau))))
    terms.append((_block(n, q, -B @ gains.Kp @ C), s_in * s1 * s3))
    if with_kd:
        terms.append((_block(n, q, -B @ gains.Kd @ C), shape(LAM) * s_f * s_in * s1 * s2 * s3))
    if q:
        terms.append((_block(n, q, tr=-B @ gains.Ui), s_in * s1))
        terms.append((_block(n, q, bl=-gains.Vi @ C), s3))
    merged = {}
    for M, s in terms:
        if not np.any(M):
            continue
        merged[s] = merged[s] + M if s in merged else M
    return CharacteristicPencil(n + q, tuple((M, s) for s, M in merged.items()), label)


def assemble_pencil(sys: DelaySystem, gains: PidGains,
                    cfg: LoopConfig | None = None) -> CharacteristicPencil:
    """Assemble the closed-loop characteristic function for ``cfg``.

    The plant's own ``input_delay`` (if any) is part of every variant;
    ``LoopConfig.input_delay`` overrides it.  A singular ``I - B Kd C`` is not
    an assembly error; it only matters to the root solvers.
    """
    cfg = cfg or LoopConfig.nominal()
    if gains.shape != (sys.m, sys.p):
        raise ValueError(f"gains are {gains.shape}, system needs {(sys.m, sys.p)}")
    ident = Shape()

    def pert(R, dim):
        if R is None:
            return ident
        if R.dim != dim:
            raise ValueError(f"perturbation dimension {R.dim}, expected {dim}")
        return R.factor

    tau_u = sys.input_delay or 0.0
    if cfg.variant == "InputDelay":
        tau_u = cfg.tau_u
    s_in = shape(Factor("exp", tau_u))
    s_f = shape(Factor("lp", cfg.T)) if cfg.T else ident
    s1 = s2 = s3 = ident
    v = cfg.variant
    if v == "FeedbackDelay":
        s1 = shape(Factor("exp", cfg.r))
    elif v == "FiniteDifference":
        s2 = shape(Factor("fd", cfg.r))
    elif v in ("GeneralPerturbed", "NoKdPerturbed", "InputDelay"):
        s1, s2, s3 = pert(cfg.R1, sys.m), pert(cfg.R2, sys.p), pert(cfg.R3, sys.p)
        for name, s in (("R1", s1), ("R3", s3)):
            if any(f.kind == "fd" for f in s.factors):
                # the kernel vanishes at lam = 2*pi*j*k/r, so R1/R3 would lose rank
                raise ValueError(f"{name} must stay full rank; FiniteDiffKernel is only valid as R2")
    if v == "NoKdPerturbed":
        s_f = ident
    # H6 is assembled with the same minus sign as H4 in front of the feedback block.
    return _closed_loop(sys, gains, s1, s2, s3, s_in, s_f, label=v)
