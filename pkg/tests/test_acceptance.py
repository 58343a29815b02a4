"""Acceptance criteria, each run at its stated tolerance.

Every criterion is computed once (cached) as a list of named sub-checks; the
tests assert on them and ``conftest.py`` prints one PASS/FAIL line per
criterion at the end of the run.  Sub-checks that the published data cannot
meet are kept verbatim and marked as strict expected failures.
"""

import time
from functools import lru_cache

import numpy as np
import pytest

from strongstab import catalog
from strongstab.analysis import (bkdc_eigs, in_clos_S, routh_hurwitz, third_order_count)
from strongstab.design import DesignOpts, abscissa_gradient, alpha_bkdc, design_pid, rho_bkdc
from strongstab.model import (CharacteristicPencil, DelaySystem, Factor, LoopConfig, PidGains,
                              assemble_pencil, shape)
from strongstab.perturbation_lab import limit_root
from strongstab.spectra import (BoundaryRootError, SolverOpts, count_rhp_roots, rightmost_roots,
                                spectral_abscissa)

BAND = 1e-6
RESULTS = {}


class Check:
    def __init__(self, name, ok, detail=""):
        self.name, self.ok, self.detail = name, bool(ok), detail

    def __repr__(self):
        return f"{'ok' if self.ok else 'FAILED'} {self.name} {self.detail}"


def record(n, title, checks, elapsed, limit):
    checks = list(checks) + [Check(f"runtime < {limit:g} s", elapsed < limit, f"{elapsed:.1f} s")]
    RESULTS[n] = (title, checks)
    return {c.name: c for c in checks}


def require(checks, *names):
    names = names or tuple(checks)
    bad = [checks[k] for k in names if not checks[k].ok]
    assert not bad, bad


# ---------------------------------------------------------------------------
# 1. Second-order PD stability region
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def criterion_1():
    t0 = time.perf_counter()
    s = catalog.second_order()
    grid = np.linspace(-3, 1, 41)
    disagree = skipped = 0
    for kp in grid:
        for kd in grid:
            if abs(kd + 1) <= BAND or abs(kp) <= BAND:
                skipped += 1
                continue
            # (1 + kd) lam^2 + kp lam - 1 is Hurwitz iff all coefficients share a sign
            coeffs = np.array([1 + kd, kp, -1.0])
            oracle = bool(np.all(coeffs > 0) or np.all(coeffs < 0))
            a = spectral_abscissa(assemble_pencil(s, PidGains.siso(kp, kd)))
            region = kd < -1 and kp < 0
            disagree += (a < 0) != oracle
            disagree += region != oracle
    return record(1, "second-order PD stability region", [
        Check("zero disagreements", disagree == 0, f"{disagree} off-band, {skipped} band points")
    ], time.perf_counter() - t0, 10)


def test_criterion_1():
    require(criterion_1())


# ---------------------------------------------------------------------------
# 2. Feedback-delay fragility
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def criterion_2():
    t0 = time.perf_counter()
    s, g = catalog.second_order(), PidGains.siso(-1.0, -2.0)
    checks = []
    for r in (0.02, 0.05, 0.1):
        rs = rightmost_roots(assemble_pencil(s, g, LoopConfig.feedback_delay(r)))
        good = rs.roots[rs.converged]
        top = good[np.argsort(-np.abs(good.imag), kind="stable")[:10]]
        mean = float(np.mean(top.real))
        target = np.log(2) / r
        checks.append(Check(f"H1 unstable at r={r}", rs.abscissa > 0, f"abscissa {rs.abscissa:.4f}"))
        checks.append(Check(f"chain real part at r={r}", abs(mean - target) <= 0.1 * target,
                            f"{mean:.4f} vs ln2/r = {target:.4f}"))
    return record(2, "feedback-delay fragility", checks, time.perf_counter() - t0, 30)


def test_criterion_2():
    require(criterion_2())


# ---------------------------------------------------------------------------
# 3. Third-order region map
# ---------------------------------------------------------------------------

MARKED = {(-2.0, 0.5): 2, (0.5, 2.0): 2, (-2.0, 2.0): 3, (0.5, -0.5): 1, (3.5, 2.0): 0,
          (-2.0, -1.75): 0}


def near_boundary(kp, kd):
    line = 1 / 3 + 2 / 3 * kp
    return abs(kd - 1) <= BAND or abs(kp + 1) <= BAND or \
        (abs(kp) >= 1 - BAND and abs(kd - line) <= BAND)


@lru_cache(maxsize=None)
def criterion_3():
    t0 = time.perf_counter()
    s = catalog.third_order()
    disagree = skipped = 0
    for kp in np.linspace(-4, 4, 81):
        for kd in np.linspace(-7 / 3, 3, 81):
            if near_boundary(kp, kd):
                skipped += 1
                continue
            c = count_rhp_roots(assemble_pencil(s, PidGains.siso(kp, kd)))
            disagree += c != third_order_count(kp, kd)
    marked_ok = all(count_rhp_roots(assemble_pencil(s, PidGains.siso(kp, kd))) == c
                    and third_order_count(kp, kd) == c for (kp, kd), c in MARKED.items())
    return record(3, "third-order region map", [
        Check("counter matches closed form", disagree == 0,
              f"{disagree} disagreements, {skipped} band points"),
        Check("marked labels 0/1/2/3", marked_ok),
    ], time.perf_counter() - t0, 300)


def test_criterion_3():
    require(criterion_3())


# ---------------------------------------------------------------------------
# 4. Low-pass filter verdicts for the third-order plant
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def criterion_4():
    t0 = time.perf_counter()
    s = catalog.third_order()
    good = PidGains.siso(-1.08015, -1.04045)
    bad = PidGains.siso(1.26832, 1.01777)
    a_good = spectral_abscissa(assemble_pencil(s, good))
    alpha_good = float(np.max(bkdc_eigs(s, good.Kd).real))
    a_bad = spectral_abscissa(assemble_pencil(s, bad))
    h3 = [spectral_abscissa(assemble_pencil(s, bad, LoopConfig.low_pass(T)))
          for T in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)]
    return record(4, "low-pass verdicts (third-order plant)", [
        Check("constrained design: H0 stable", a_good < 0, f"{a_good:.5f}"),
        Check("constrained design: alpha = 0 < 1", alpha_good == 0.0, f"{alpha_good}"),
        Check("unconstrained design: H0 stable", a_bad < 0, f"{a_bad:.5f}"),
        Check("unconstrained design: H3 unstable for all T", all(a > 0 for a in h3),
              f"min abscissa {min(h3):.3g}"),
    ], time.perf_counter() - t0, 10)


def test_criterion_4():
    require(criterion_4())


# ---------------------------------------------------------------------------
# 5. Six-state plant with three delays
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def criterion_5():
    t0 = time.perf_counter()
    s = catalog.ex52()
    P0 = assemble_pencil(s, PidGains.zeros(3, 2))
    rs = rightmost_roots(P0, SolverOpts(N=40))
    count = count_rhp_roots(P0)
    top = rs.roots[0]
    a = spectral_abscissa(assemble_pencil(s, catalog.ex52_gains(), LoopConfig.low_pass(1e-7)),
                          SolverOpts(N=40))
    return record(5, "six-state delay plant", [
        Check("open loop: 5 RHP roots", count == 5 and int(np.sum(rs.roots.real > 0)) == 5,
              f"argument principle {count}"),
        Check("open loop: rightmost 2.607 +- 2.144j",
              abs(top.real - 2.607) <= 5e-3 and abs(abs(top.imag) - 2.144) <= 5e-3,
              f"{top.real:.5f} +- {abs(top.imag):.5f}j"),
        Check("closed loop abscissa -0.1768 +- 5e-3", abs(a + 0.1768) <= 5e-3, f"{a:.5f}"),
    ], time.perf_counter() - t0, 60)


def test_criterion_5_open_loop():
    c = criterion_5()
    require(c, "open loop: 5 RHP roots", "open loop: rightmost 2.607 +- 2.144j", "runtime < 60 s")


@pytest.mark.xfail(strict=True, reason="printed 4-decimal gains put the rightmost pair at "
                   "-0.1614; rounding alone spans [-0.170, -0.146] (see decisions ledger)")
def test_criterion_5_closed_loop_abscissa():
    require(criterion_5(), "closed loop abscissa -0.1768 +- 5e-3")


# ---------------------------------------------------------------------------
# 6. Quadcopter
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def criterion_6():
    t0 = time.perf_counter()
    s = catalog.quadcopter()
    g = catalog.quadcopter_gains(1)
    T = 1e-6
    rho = rho_bkdc(s, g.Kd)
    P3 = assemble_pencil(s, g, LoopConfig.low_pass(T))
    a = spectral_abscissa(P3)
    roots = rightmost_roots(P3, SolverOpts(re_min=-np.inf)).roots
    fast = np.sort(roots[np.argsort(roots.real)[:4]].real)
    lam = np.linalg.eigvals(g.Kd @ s.C @ s.B)
    pred = np.sort(((lam - 1) / T).real)
    rel = np.abs(fast - pred) / np.abs(pred)
    return record(6, "quadcopter (Theta0 = Omega0)", [
        Check("rho(B Kd C) = 0.4925 +- 5e-3", abs(rho - 0.4925) <= 5e-3, f"{rho:.5f}"),
        Check("H3 abscissa -0.7526 +- 5e-3", abs(a + 0.7526) <= 5e-3, f"{a:.5f}"),
        Check("four fastest roots within 1% of (lam_i - 1)/T", bool(np.all(rel < 0.01)),
              f"max rel err {rel.max():.2e}"),
    ], time.perf_counter() - t0, 120)


def test_criterion_6_rho_and_fast_roots():
    require(criterion_6(), "rho(B Kd C) = 0.4925 +- 5e-3",
            "four fastest roots within 1% of (lam_i - 1)/T", "runtime < 120 s")


@pytest.mark.xfail(strict=True, reason="printed gains fix the abscissa only to about +-0.05 "
                   "(rounding spans [-0.783, -0.674]); computed -0.698 (see decisions ledger)")
def test_criterion_6_h3_abscissa():
    require(criterion_6(), "H3 abscissa -0.7526 +- 5e-3")


# ---------------------------------------------------------------------------
# 7. Quadcopter with input delay
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def criterion_7():
    t0 = time.perf_counter()
    s = catalog.quadcopter(input_delay=0.1)
    g1 = catalog.quadcopter_gains(1)
    g2 = catalog.quadcopter_gains(2)
    a1 = spectral_abscissa(assemble_pencil(s, g1))
    a1f = spectral_abscissa(assemble_pencil(s, g1, LoopConfig.low_pass(1e-6)))
    a2 = spectral_abscissa(assemble_pencil(s, g2, LoopConfig.low_pass(1e-6)))
    rho2 = rho_bkdc(s, g2.Kd)
    return record(7, "quadcopter with input delay", [
        Check("first gains unstable without filter", a1 > 0, f"{a1:.4f}"),
        Check("first gains unstable with filter", a1f > 0, f"{a1f:.4f}"),
        Check("second gains: abscissa -1.1797 +- 1e-2", abs(a2 + 1.1797) <= 1e-2, f"{a2:.5f}"),
        Check("second gains: rho(B Kd C) = 0.9990 +- 1e-3", abs(rho2 - 0.9990) <= 1e-3,
              f"{rho2:.5f}"),
    ], time.perf_counter() - t0, 120)


def test_criterion_7_stability_verdicts():
    require(criterion_7(), "first gains unstable without filter",
            "first gains unstable with filter", "second gains: abscissa -1.1797 +- 1e-2",
            "runtime < 120 s")


@pytest.mark.xfail(strict=True, reason="the printed second gain set is the swapped-start "
                   "design (rho 0.539); 0.9990 belongs to the other design (see decisions ledger)")
def test_criterion_7_rho():
    require(criterion_7(), "second gains: rho(B Kd C) = 0.9990 +- 1e-3")


# ---------------------------------------------------------------------------
# 8. Design properties
# ---------------------------------------------------------------------------

def strongly_stabilizing(s, gains):
    if gains.T is None:
        return False
    return spectral_abscissa(assemble_pencil(s, gains)) < 0 and alpha_bkdc(s, gains.Kd) < 1 \
        and spectral_abscissa(assemble_pencil(s, gains, LoopConfig.low_pass(gains.T))) < 0


@lru_cache(maxsize=None)
def criterion_8():
    t0 = time.perf_counter()
    s3 = catalog.third_order()
    r3 = design_pid(s3, DesignOpts(starts=1, initial=PidGains.siso(1.5, 1.2),
                                   structure_mask={"Ki": np.zeros((1, 1), bool)}))
    kp, kd = r3.gains.Kp[0, 0], r3.gains.Kd[0, 0]
    s52 = catalog.ex52()
    r52 = design_pid(s52, DesignOpts(starts=1, initial=PidGains.zeros(3, 2), t_penalty=1e5))
    sq = catalog.quadcopter()
    rq = design_pid(sq, DesignOpts(starts=10, seed=0))
    n_strong = sum(r.feasible for r in rq.starts)
    return record(8, "design properties", [
        Check("third-order design ends in the strong-stability region",
              kp < -1 and kd < 1 / 3 + 2 / 3 * kp, f"(kp, kd) = ({kp:.5f}, {kd:.5f})"),
        Check("six-state design: feasible, abscissa < -0.05, alpha < 1",
              r52.feasible and r52.objective < -0.05 and r52.alpha_constraint < 1,
              f"abscissa {r52.objective:.4f}, alpha {r52.alpha_constraint:.4f}"),
        Check("quadcopter 10 starts: >= 1 strongly stabilizing",
              rq.feasible and strongly_stabilizing(sq, rq.gains),
              f"{n_strong} feasible starts, best abscissa {rq.objective:.4f}, T {rq.T_selected}"),
    ], time.perf_counter() - t0, 900)


def test_criterion_8():
    require(criterion_8())


# ---------------------------------------------------------------------------
# 9. Property suites
# ---------------------------------------------------------------------------

def _gradient_suite():
    rng = np.random.default_rng(909)
    worst, done = 0.0, 0
    while done < 20:
        n, m, p = 3, 2, 2
        s = DelaySystem(A=(rng.standard_normal((n, n)) - 1.5 * np.eye(n),
                           0.5 * rng.standard_normal((n, n))),
                        delays=(float(rng.uniform(0.2, 1.0)),),
                        B=rng.standard_normal((n, m)), C=rng.standard_normal((p, n)))
        g = PidGains(0.5 * rng.standard_normal((m, p)), 0.1 * rng.standard_normal((m, p)),
                     0.5 * rng.standard_normal((m, p)))
        ag = abscissa_gradient(s, g)
        if ag.nonsmooth or abs(ag.root) < 1e-3:
            continue
        an, num = [], []
        for name in ("Kp", "Kd", "Ki"):
            base = getattr(g, name)
            for idx in np.ndindex(base.shape):
                vals = []
                for sgn in (1, -1):
                    M = base.copy()
                    M[idx] += sgn * 1e-6
                    vals.append(spectral_abscissa(assemble_pencil(s, g.replace(**{name: M}))))
                num.append((vals[0] - vals[1]) / 2e-6)
                an.append(ag.as_dict()[name][idx])
        an, num = np.array(an), np.array(num)
        worst = max(worst, float(np.linalg.norm(an - num) / np.linalg.norm(num)))
        done += 1
    return worst


def _counting_suite():
    rng = np.random.default_rng(2024)
    disagree, done = 0, 0
    while done < 50:
        n, K = int(rng.integers(1, 5)), int(rng.integers(0, 3))
        A = [rng.standard_normal((n, n)) * rng.uniform(0.3, 1.5)]
        A += [rng.standard_normal((n, n)) * rng.uniform(0.2, 1.0) for _ in range(K)]
        s = DelaySystem(A=tuple(A), delays=tuple(np.sort(rng.uniform(0.1, 1.5, K))),
                        B=np.eye(n)[:, :1], C=np.eye(n)[:1])
        P = assemble_pencil(s, PidGains.zeros(1, 1))
        try:
            c = count_rhp_roots(P)
        except BoundaryRootError:
            continue
        rs = rightmost_roots(P, SolverOpts(N=60))
        disagree += c != int(np.sum(rs.roots[rs.converged].real > 0))
        done += 1
    return disagree


def _limit_pencil(mu):
    return CharacteristicPencil(1, ((np.array([[1.0 + 0j]]), shape(Factor("lam"))),
                                    (np.array([[-mu]]), shape()),
                                    (np.array([[mu]]), shape(Factor("exp", 1.0)))))


def _limit_suite():
    rng = np.random.default_rng(5150)
    disagree, done = 0, 0
    while done < 500:
        mu = complex(rng.uniform(-3, 3), rng.uniform(-5, 5))
        R = 2 * abs(mu) + 1
        try:
            w = count_rhp_roots(_limit_pencil(mu), (1e-7, R, -R, R))
        except BoundaryRootError:
            continue
        z = limit_root(mu)
        outside = not in_clos_S(mu)
        disagree += (z is not None) != outside
        disagree += (w > 0) != outside
        done += 1
    return disagree


def _wa_suite():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 5))
        n = m + int(rng.integers(1, 5))
        B, Kd, C = rng.standard_normal((n, m)), rng.standard_normal((m, m)), \
            rng.standard_normal((m, n))
        big = np.linalg.eigvals(B @ Kd @ C)
        big = np.sort_complex(big[np.argsort(-np.abs(big))[:m]])
        small = np.sort_complex(np.linalg.eigvals(Kd @ C @ B))
        worst = max(worst, float(np.max(np.abs(big - small) / np.maximum(1, np.abs(small)))))
    return worst


@lru_cache(maxsize=None)
def criterion_9():
    t0 = time.perf_counter()
    g = _gradient_suite()
    c = _counting_suite()
    lim = _limit_suite()
    wa = _wa_suite()
    return record(9, "property suites", [
        Check("gradient vs finite differences (20)", g <= 1e-5, f"max rel err {g:.2e}"),
        Check("argument principle vs discretization (50)", c == 0, f"{c} disagreements"),
        Check("limit root exists iff outside clos(S) (500)", lim == 0, f"{lim} disagreements"),
        Check("Weinstein-Aronszajn (50)", wa <= 1e-10, f"max err {wa:.1e}"),
    ], time.perf_counter() - t0, 300)


def test_criterion_9():
    require(criterion_9())


# ---------------------------------------------------------------------------
# 10. No P or PI controller for the third-order plant
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def criterion_10():
    t0 = time.perf_counter()
    grid = np.linspace(-50, 50, 201)
    p_ok = all(not routh_hurwitz([1.0, 1 - kp, -1 / 3, -kp - 1])[0] for kp in grid)
    pi_ok = True
    for kp in grid:
        for ki in grid:
            ok, conds = routh_hurwitz([1.0, 1 - kp, -1 / 3 - ki, -1 - kp, -ki])
            pi_ok &= (not ok) and not all(conds)
    return record(10, "no stabilizing P or PI gains", [
        Check("P control: every kp violates a condition", p_ok),
        Check("PI control: every (kp, ki) violates a condition", pi_ok),
    ], time.perf_counter() - t0, 10)


def test_criterion_10():
    require(criterion_10())


if __name__ == "__main__":
    for n in range(1, 11):
        globals()[f"criterion_{n}"]()
        title, checks = RESULTS[n]
        verdict = "PASS" if all(c.ok for c in checks) else "FAIL"
        print(f"{verdict} criterion {n}: {title}; " + "; ".join(map(repr, checks)))
