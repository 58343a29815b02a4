"""Bounded uncertainties on system matrices and delays, with sampled worst-case lower bounds.

Uncertain matrices are affine in norm-bounded blocks::

    R~ = R + sum_l G_{R,l} delta_l H_{R,l},   ||delta_l||_F <= 1,
    tau~_k = tau_k + dtau_k,                  |dtau_k| <= dtau_bar_k.

The exact pseudo-spectral abscissa is not computed here.  The sampled maximum
over admissible perturbations is a lower bound on it.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import bkdc_eigs
from .model import DelaySystem, LoadError, assemble_pencil
from .perturbation_lab import thread_cap
from .spectra import spectral_abscissa

NORM_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class UncBlock:
    """One term ``G delta H`` acting on ``target`` (``"A0"``, ``"Ak:k"`` or ``"Ak"``, ``"B"``, ``"C"``).

    Blocks with the same ``delta`` id share one perturbation matrix.
    """

    target: str
    G: np.ndarray
    H: np.ndarray
    delta: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "G", np.atleast_2d(np.asarray(self.G, dtype=float)))
        object.__setattr__(self, "H", np.atleast_2d(np.asarray(self.H, dtype=float)))

    @property
    def shape(self):
        return self.G.shape[1], self.H.shape[0]


def _target_index(target: str):
    if target in ("B", "C"):
        return target
    # "Ak:2" (schema form) and "A2" both mean the coefficient of the second delay
    t = target[3:] if target.startswith("Ak:") else target[1:] if target.startswith("A") else ""
    if t.isdigit():
        return int(t)
    raise LoadError(f"unknown uncertainty target {target!r}")


@dataclass(frozen=True)
class UncertaintySet:
    blocks: tuple = ()
    delay_bounds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "delay_bounds", tuple(float(b) for b in self.delay_bounds))
        if any(b < 0 for b in self.delay_bounds):
            raise LoadError("delay bounds must be nonnegative")
        keys = tuple(b.delta if b.delta is not None else f"#{i}" for i, b in enumerate(self.blocks))
        object.__setattr__(self, "_keys", keys)
        shapes = {}
        for blk, key in zip(self.blocks, keys):
            _target_index(blk.target)
            if key in shapes and shapes[key] != blk.shape:
                raise LoadError(f"blocks sharing delta {key!r} have different delta shapes")
            shapes[key] = blk.shape

    @property
    def groups(self) -> list:
        """Independent perturbation ids in first-appearance order."""
        return list(dict.fromkeys(self._keys))

    def group_shape(self, key):
        return self.blocks[self._keys.index(key)].shape

    def validate_for(self, sys: DelaySystem):
        if self.delay_bounds and len(self.delay_bounds) != sys.K:
            raise LoadError(f"{len(self.delay_bounds)} delay bounds for {sys.K} delays")
        for b, tau in zip(self.delay_bounds, sys.delays):
            if not b < tau:
                raise LoadError(f"delay bound {b} must be smaller than the delay {tau}")
        for blk in self.blocks:
            idx = _target_index(blk.target)
            if idx == "B":
                R = sys.B
            elif idx == "C":
                R = sys.C
            elif idx <= sys.K:
                R = sys.A[idx]
            else:
                raise LoadError(f"target {blk.target} but the system has {sys.K} delays")
            if blk.G.shape[0] != R.shape[0] or blk.H.shape[1] != R.shape[1]:
                raise LoadError(f"block on {blk.target}: G {blk.G.shape} and H {blk.H.shape} do "
                                f"not fit a {R.shape} matrix")

    def to_dict(self) -> dict:
        blocks = []
        for blk in self.blocks:
            d = {"target": blk.target, "G": blk.G.tolist(), "H": blk.H.tolist()}
            if blk.delta is not None:
                d["delta"] = blk.delta
            blocks.append(d)
        return {"blocks": blocks, "delay_bounds": list(self.delay_bounds)}

    @classmethod
    def from_dict(cls, data: dict) -> "UncertaintySet":
        try:
            blocks = [UncBlock(b["target"], b["G"], b["H"], b.get("delta")) for b in data.get("blocks", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise LoadError(f"malformed uncertainty block: {exc}") from None
        return cls(tuple(blocks), tuple(data.get("delay_bounds", [])))


def load_uncertainty(path) -> UncertaintySet:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{path}: invalid JSON ({exc})") from None
    return UncertaintySet.from_dict(data)


def realize_system(sys: DelaySystem, unc: UncertaintySet, deltas=None, dtaus=None) -> DelaySystem:
    """Perturbed system for one admissible ``(delta, dtau)``.

    ``deltas`` lists one matrix per entry of ``unc.groups`` (``None`` means all zero).
    """
    unc.validate_for(sys)
    groups = unc.groups
    if deltas is None:
        deltas = [np.zeros(unc.group_shape(k)) for k in groups]
    if len(deltas) != len(groups):
        raise ValueError(f"{len(deltas)} delta matrices for {len(groups)} uncertainty groups")
    dmap = {}
    for k, d in zip(groups, deltas):
        d = np.atleast_2d(np.asarray(d, dtype=float))
        if d.shape != unc.group_shape(k):
            raise ValueError(f"delta for {k!r} must be {unc.group_shape(k)}")
        if np.linalg.norm(d) > 1 + NORM_SLACK:
            raise ValueError(f"||delta||_F = {np.linalg.norm(d):.6g} exceeds 1")
        dmap[k] = d
    bounds = unc.delay_bounds or (0.0,) * sys.K
    dtaus = np.zeros(sys.K) if dtaus is None else np.asarray(dtaus, dtype=float)
    if dtaus.shape != (sys.K,):
        raise ValueError(f"dtau must have {sys.K} entries")
    for dt, b in zip(dtaus, bounds):
        if abs(dt) > b * (1 + 1e-15):
            raise ValueError(f"|dtau| = {abs(dt):.6g} exceeds its bound {b}")
    A = [a.copy() for a in sys.A]
    B, C = sys.B.copy(), sys.C.copy()
    for blk, key in zip(unc.blocks, unc._keys):
        term = blk.G @ dmap[key] @ blk.H
        idx = _target_index(blk.target)
        if idx == "B":
            B = B + term
        elif idx == "C":
            C = C + term
        else:
            A[idx] = A[idx] + term
    delays = tuple(t + dt for t, dt in zip(sys.delays, dtaus))
    return DelaySystem(A=tuple(A), delays=delays, B=B, C=C, input_delay=sys.input_delay)


def sample_ball(shape, rng) -> np.ndarray:
    """Uniform sample from the unit Frobenius ball of ``shape`` matrices."""
    d = int(np.prod(shape))
    g = rng.standard_normal(shape)
    nrm = np.linalg.norm(g)
    if nrm == 0:
        return np.zeros(shape)
    return g / nrm * rng.uniform() ** (1.0 / d)


def sample_uncertainty(sys, unc, rng):
    deltas = [sample_ball(unc.group_shape(k), rng) for k in unc.groups]
    bounds = np.asarray(unc.delay_bounds or (0.0,) * sys.K, dtype=float)
    dtaus = rng.uniform(-1.0, 1.0, sys.K) * bounds
    return deltas, dtaus


def extreme_points(sys, unc) -> list:
    """Deterministic probes: rank-one ``delta = +-u v^T`` aligned with ``G`` and ``H``, and ``dtau in {0, +-bound}``."""
    groups = unc.groups
    zeros = [np.zeros(unc.group_shape(k)) for k in groups]
    bounds = np.asarray(unc.delay_bounds or (0.0,) * sys.K, dtype=float)
    dtau_opts = [np.zeros(sys.K)]
    if np.any(bounds > 0):
        dtau_opts += [bounds.copy(), -bounds]
    rank_one = []
    for k in groups:
        blk = unc.blocks[unc._keys.index(k)]
        _, _, Vg = np.linalg.svd(blk.G)
        Uh, _, _ = np.linalg.svd(blk.H)
        rank_one.append(np.outer(Vg[0], Uh[:, 0]))
    pts = []
    for dt in dtau_opts:
        pts.append((zeros, dt))
        for sign in (1.0, -1.0):
            for i in range(len(groups)):
                ds = list(zeros)
                ds[i] = sign * rank_one[i]
                pts.append((ds, dt))
            if len(groups) > 1:
                pts.append(([sign * r for r in rank_one], dt))
    return pts


@dataclass
class WorstCase:
    abscissa_lb: float
    alpha_ps_lb: float
    argmax_abscissa: tuple
    argmax_alpha: tuple
    nominal_abscissa: float
    nominal_alpha: float
    evaluated: int
    failed: int
    samples: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        def rec(arg):
            deltas, dtaus = arg
            return {"delta": [np.asarray(d).tolist() for d in deltas],
                    "dtau": np.asarray(dtaus).tolist()}
        return {"abscissa_lb": self.abscissa_lb, "alpha_ps_lb": self.alpha_ps_lb,
                "nominal_abscissa": self.nominal_abscissa, "nominal_alpha": self.nominal_alpha,
                "argmax_abscissa": rec(self.argmax_abscissa),
                "argmax_alpha": rec(self.argmax_alpha),
                "evaluated": self.evaluated, "failed": self.failed}


def sampled_worst_case(sys, unc: UncertaintySet, gains, Nsamples: int = 100, seed: int = 0,
                       opts=None) -> WorstCase:
    """Sampled lower bounds on the worst-case spectral abscissa and on ``alpha(B~ Kd C~)``.

    The nominal point and :func:`extreme_points` are always evaluated; random
    sample ``i`` uses the generator ``default_rng([seed, i])``, so a larger
    ``Nsamples`` only adds points.
    """
    if Nsamples < 1:
        raise ValueError("Nsamples must be at least 1")
    unc.validate_for(sys)
    points = extreme_points(sys, unc)
    for i in range(Nsamples):
        points.append(sample_uncertainty(sys, unc, np.random.default_rng([seed, i])))

    def evaluate(pt):
        deltas, dtaus = pt
        try:
            s = realize_system(sys, unc, deltas, dtaus)
            a = spectral_abscissa(assemble_pencil(s, gains), opts)
            al = float(np.max(bkdc_eigs(s, gains.Kd).real))
            return a, al
        except (ValueError, ZeroDivisionError, np.linalg.LinAlgError):
            return None

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        vals = list(pool.map(evaluate, points))
    if vals[0] is None:
        raise ValueError("nominal system could not be evaluated")
    ok = [i for i, v in enumerate(vals) if v is not None]
    ia = max(ok, key=lambda i: (vals[i][0], -i))
    il = max(ok, key=lambda i: (vals[i][1], -i))
    return WorstCase(
        abscissa_lb=float(vals[ia][0]), alpha_ps_lb=float(vals[il][1]),
        argmax_abscissa=points[ia], argmax_alpha=points[il],
        nominal_abscissa=float(vals[0][0]), nominal_alpha=float(vals[0][1]),
        evaluated=len(ok), failed=len(vals) - len(ok),
        samples=[(points[i], vals[i]) for i in range(len(points))],
    )
