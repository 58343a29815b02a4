"""Command-line front end.

Exit status: 0 success (stable / feasible), 1 the analysis ran but the verdict
is unstable or infeasible, 2 input error.
"""

from __future__ import annotations

import argparse
import re
import sys as _sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import catalog, fileio
from .analysis import classify, fragility_report, region_map
from .design import DesignOpts, design_input_delay, design_pid
from .model import LoadError, LoopConfig, PidGains, assemble_pencil, load_gains, load_system
from .perturbation_lab import sweep
from .spectra import DegeneratePencilError, SolverOpts, rightmost_roots

EXIT_OK, EXIT_VERDICT, EXIT_INPUT = 0, 1, 2

_VALUE_FLAGS = {"--system", "--gains", "--variant", "--r", "--T", "--N", "--out", "--starts",
                "--seed", "--t", "--grid", "--perturbation", "--name", "--kp", "--kd"}
_NEGATIVE = re.compile(r"^-[\d.]")


class InputError(Exception):
    pass


def parse_grid(text: str) -> np.ndarray:
    """``a:b:n`` -> ``n`` points from ``a`` to ``b`` inclusive; ``a`` and ``b`` may be fractions like ``-7/3``."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid {text!r} is not of the form a:b:n")
    try:
        a, b = (float(Fraction(p.strip())) for p in parts[:2])
        n = int(parts[2])
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"grid {text!r} is not of the form a:b:n") from None
    if n < 1 or (n == 1 and a != b):
        raise argparse.ArgumentTypeError(f"grid {text!r}: n must be >= 2 (or 1 with a == b)")
    return np.linspace(a, b, n)


def _positive(kind):
    def conv(text):
        try:
            v = kind(float(Fraction(text))) if kind is float else kind(text)
        except (ValueError, ZeroDivisionError):
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{text} must be positive")
        return v
    return conv


def _join_negative_values(argv):
    # argparse takes "-4:4:81" or "-0.5" for an option; bind such values with "="
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_FLAGS and i + 1 < len(argv) and _NEGATIVE.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strongstab",
                                description="Strong stability analysis and PID design for "
                                            "time-delay systems.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, gains_required=False, N=True):
        sp.add_argument("--system", required=True, type=Path, help="system JSON file")
        sp.add_argument("--gains", required=gains_required, type=Path, help="gains JSON file")
        if N:
            sp.add_argument("--N", type=int, default=None, help="collocation degree (default 40)")
        sp.add_argument("--out", type=Path, help="output file")

    a = sub.add_parser("analyze", help="rightmost characteristic roots of a loop")
    common(a)
    a.add_argument("--variant", default="nominal",
                   choices=["nominal", "fbdelay", "fd", "lowpass", "input-delay"])
    a.add_argument("--r", type=_positive(float), help="feedback delay / finite-difference step")
    a.add_argument("--T", type=_positive(float), help="low-pass time constant")

    c = sub.add_parser("check", help="fragility and strong-stability report")
    common(c, gains_required=True)

    d = sub.add_parser("design", help="multistart PID design")
    common(d)
    d.add_argument("--variant", choices=["nominal", "input-delay"], default=None,
                   help="input-delay uses the rho(B Kd C) < 1 barrier (default: from the system)")
    d.add_argument("--starts", type=_positive(int), default=10)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--t", dest="t_penalty", type=_positive(float), default=1e2,
                   help="initial penalty weight")

    s = sub.add_parser("sweep", help="abscissa over a range of perturbation sizes")
    common(s, gains_required=True)
    s.add_argument("--perturbation", required=True, choices=["fbdelay", "fd", "lowpass"])
    s.add_argument("--grid", type=parse_grid, default=None,
                   help="a:b:n perturbation sizes (default 13 log-spaced points in [1e-4, 1e-1])")

    r = sub.add_parser("region", help="PD parameter-plane root counts (SISO)")
    common(r, N=False)
    r.add_argument("--kp", required=True, type=parse_grid)
    r.add_argument("--kd", required=True, type=parse_grid)

    e = sub.add_parser("examples", help="write a bundled example system")
    e.add_argument("--name", choices=sorted(catalog.SYSTEMS), default=None,
                   help="omit to list the bundled examples")
    e.add_argument("--out", type=Path)
    return p


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _load(args, need_gains=False):
    system = load_system(args.system)
    gains = None
    if getattr(args, "gains", None) is not None:
        gains = load_gains(args.gains, system)
    elif need_gains:
        raise InputError("--gains is required")
    return system, gains


def _opts(args):
    N = getattr(args, "N", None)
    return SolverOpts() if N is None else SolverOpts(N=N)


def _emit_json(obj, out):
    if out is None:
        _sys.stdout.write(fileio.dumps(obj))
    else:
        fileio.write_json(out, obj)


def _emit_csv(writer, out):
    if out is None:
        _sys.stdout.write(fileio.csv_text(writer))
    else:
        fileio.write_csv(out, writer)


def _config(args, system, gains):
    v = args.variant
    T = args.T if args.T is not None else gains.T
    if v in ("fbdelay", "fd"):
        if args.r is None:
            raise InputError(f"--variant {v} needs --r")
        return LoopConfig.feedback_delay(args.r) if v == "fbdelay" else \
            LoopConfig.finite_difference(args.r)
    if v == "lowpass":
        if T is None:
            raise InputError("--variant lowpass needs --T (or T in the gains file)")
        return LoopConfig.low_pass(T)
    if v == "input-delay":
        if not system.input_delay:
            raise InputError("--variant input-delay needs input_delay in the system file")
        return LoopConfig.input_delay(system.input_delay, T)
    return LoopConfig.nominal()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    system, gains = _load(args)
    if gains is None:
        gains = PidGains.zeros(system.m, system.p)
    P = assemble_pencil(system, gains, _config(args, system, gains))
    rs = rightmost_roots(P, _opts(args))
    absc = rs.abscissa
    print(f"spectral abscissa: {absc:.10g}")
    for z, res, ok in zip(rs.roots[:10], rs.residuals[:10], rs.converged[:10]):
        flag = "" if ok else "  (not converged)"
        print(f"  {z.real:+.10g} {z.imag:+.10g}j  residual {res:.2e}{flag}")
    if args.out is not None:
        if args.out.suffix.lower() == ".csv":
            fileio.write_csv(args.out, rs.write_csv)
        else:
            fileio.write_json(args.out, rs.to_dict())
    return EXIT_OK if absc < 0 else EXIT_VERDICT


def cmd_check(args) -> int:
    system, gains = _load(args, need_gains=True)
    rep = fragility_report(system, gains, _opts(args))
    label = classify(system, gains, _opts(args), rep)
    rows = [("nominal abscissa", f"{rep.nominal_abscissa:.10g}"),
            ("rho(B Kd C)", f"{rep.rho_BKdC:.10g}"),
            ("alpha(B Kd C)", f"{rep.alpha_BKdC:.10g}"),
            ("CB = 0", rep.cb_zero),
            ("delay fragile", rep.delay_fragile),
            ("finite-difference fragile", rep.fd_fragile),
            ("low-pass destabilizing", rep.lowpass_destabilizing),
            ("strongly stable with filter", rep.strong_with_filter),
            ("verdict", str(label))]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    for note in rep.inconclusive:
        print(f"inconclusive: {note}")
    data = dict(rep.to_dict(), verdict=str(label))
    _emit_json(data, args.out)
    return EXIT_OK if label.kind in ("StrongStable", "RobustNoFilter") else EXIT_VERDICT


def cmd_design(args) -> int:
    system, gains = _load(args)
    kw = dict(starts=args.starts, seed=args.seed, t_penalty=args.t_penalty, initial=gains)
    if args.N is not None:
        kw["verify"] = SolverOpts(N=args.N)
    dopts = DesignOpts(**kw)
    variant = args.variant or ("input-delay" if system.input_delay else "nominal")
    if variant == "input-delay":
        if not system.input_delay:
            raise InputError("--variant input-delay needs input_delay in the system file")
        res = design_input_delay(system, dopts)
    else:
        res = design_pid(system.replace(input_delay=None), dopts)
    name = "rho" if res.constraint == "rho" else "alpha"
    print(f"feasible: {res.feasible}  abscissa: {res.objective:.10g}  "
          f"{name}(B Kd C): {res.alpha_constraint:.10g}  T: {res.T_selected}")
    if args.out is not None:
        fileio.write_json(args.out, res.to_dict())
    else:
        _sys.stdout.write(fileio.dumps(res.gains.to_dict()))
    return EXIT_OK if res.feasible else EXIT_VERDICT


def cmd_sweep(args) -> int:
    system, gains = _load(args, need_gains=True)
    res = sweep(system, gains, args.perturbation, args.grid, _opts(args))
    for k, msg in res.errors.items():
        print(f"r = {res.grid[k]:.6g}: {msg}", file=_sys.stderr)
    _emit_csv(res.write_csv, args.out)
    return EXIT_OK if bool(np.all(res.stable)) else EXIT_VERDICT


def cmd_region(args) -> int:
    system, gains = _load(args)
    ki = 0.0 if gains is None else float(gains.Ki[0, 0])
    rm = region_map(system, args.kp, args.kd, ki)
    _emit_csv(rm.write_csv, args.out)
    return EXIT_OK


def cmd_examples(args) -> int:
    if args.name is None:
        for name in sorted(catalog.SYSTEMS):
            sets = ", ".join(sorted(catalog.GAIN_SETS.get(name, {})))
            print(f"{name}: gain sets {sets}")
        return EXIT_OK
    system = catalog.SYSTEMS[args.name]()
    _emit_json(system.to_dict(), args.out)
    if args.out is not None:
        # gain sets go next to the system file as <stem>.<set>.gains.json
        for set_name, make in catalog.GAIN_SETS.get(args.name, {}).items():
            path = args.out.with_name(f"{args.out.stem}.{set_name}.gains.json")
            fileio.write_json(path, make().to_dict())
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "check": cmd_check, "design": cmd_design,
            "sweep": cmd_sweep, "region": cmd_region, "examples": cmd_examples}


def main(argv=None) -> int:
    argv = list(_sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_negative_values(argv))
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (OSError, LoadError, InputError, DegeneratePencilError, ValueError,
            ZeroDivisionError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
