import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strongstab import catalog
from strongstab.analysis import (bkdc_eigs, classify, crossing_frequency, fragility_report,
                                 in_clos_S, label_from_count, odd_number_limitation, region_map,
                                 routh_hurwitz, routh_rhp_count, third_order_count,
                                 third_order_poly, third_order_region)
from strongstab.model import DelaySystem, PidGains, assemble_pencil
from strongstab.spectra import count_rhp_roots


def test_clos_S_membership():
    assert in_clos_S(0.0)
    assert in_clos_S(1.0)  # limiting value at Im = 0, closure included
    assert not in_clos_S(1.0 + 1e-12)
    assert in_clos_S(-2.0)
    assert not in_clos_S(2.0)
    assert in_clos_S(0.5 + 1.0j)  # bound cot(1) = 0.642
    assert not in_clos_S(0.7 + 1.0j)
    assert not in_clos_S(-100 + 3.2j)  # |Im| >= pi is outside
    assert in_clos_S(np.pi / 2 * 1j)  # bound is 0 at Im = pi/2
    assert not in_clos_S(1e-9 + np.pi / 2 * 1j)


def test_clos_S_is_conjugate_symmetric():
    rng = np.random.default_rng(0)
    for z in rng.uniform(-4, 4, 200) + 1j * rng.uniform(-4, 4, 200):
        assert in_clos_S(z) == in_clos_S(np.conj(z))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_weinstein_aronszajn(m, extra, seed):
    # nonzero spectra of B Kd C (n x n) and Kd C B (m x m) agree
    rng = np.random.default_rng(seed)
    n, p = m + extra, m
    B, Kd, C = rng.standard_normal((n, m)), rng.standard_normal((m, p)), rng.standard_normal((p, n))
    big = np.linalg.eigvals(B @ Kd @ C)
    small = np.linalg.eigvals(Kd @ C @ B)
    big = big[np.abs(big) > 1e-8]
    np.testing.assert_allclose(np.sort_complex(big), np.sort_complex(small), atol=1e-10,
                               rtol=1e-10)
    sys = DelaySystem(A=(np.zeros((n, n)),), delays=(), B=B, C=C)
    assert len(bkdc_eigs(sys, Kd)) == n


def test_fragility_flags_zero_kd():
    rep = fragility_report(catalog.third_order(), PidGains.siso(-2.0, 0.0))
    assert not (rep.delay_fragile or rep.fd_fragile or rep.lowpass_destabilizing)
    assert rep.rho_BKdC == 0.0 and rep.alpha_BKdC == 0.0
    assert rep.inconclusive == []


def test_fragility_third_order_pd():
    # B Kd C has the single nonzero eigenvalue kd * CB = kd
    rep = fragility_report(catalog.third_order(), PidGains.siso(-2.0, -2.0))
    assert rep.rho_BKdC == pytest.approx(2.0)
    assert rep.alpha_BKdC == pytest.approx(0.0)
    assert rep.delay_fragile and not rep.fd_fragile and not rep.lowpass_destabilizing
    assert rep.nominal_stable and rep.strong_with_filter
    d = rep.to_dict()
    assert d["eig_BKdC"][0] == [-2.0, 0.0]


def test_fragility_inconclusive_boundary():
    rep = fragility_report(catalog.third_order(), PidGains.siso(-2.0, -1.0))
    assert rep.rho_BKdC == pytest.approx(1.0)
    assert not rep.delay_fragile
    assert any("rho" in s for s in rep.inconclusive)


def test_classify_third_order():
    s = catalog.third_order()
    assert classify(s, PidGains.siso(-2.0, -2.0)).kind == "StrongStable"
    assert classify(s, PidGains.siso(-1.5, -0.8)).kind == "RobustNoFilter"
    assert classify(s, PidGains.siso(1.26832, 1.01777)).kind == "StableFragile"
    lab = classify(s, PidGains.siso(0.0, 0.0))
    assert lab.kind == "Unstable" and lab.rhp_count == 1


def test_odd_number_limitation():
    # with kd = 0 the third-order loop has one right half-plane root for kp > -1
    s = catalog.third_order()
    assert odd_number_limitation(s, [[0.0]], None)
    assert not odd_number_limitation(s, [[-2.0]], None)
    with pytest.raises(ValueError, match="boundary"):
        odd_number_limitation(s, [[-1.0]], None)


def test_routh_hurwitz_cubic():
    ok, conds = routh_hurwitz([1, 6, 11, 6])  # (s+1)(s+2)(s+3)
    assert ok and all(conds)
    ok, conds = routh_hurwitz([1, 1, 1, 6])
    assert not ok and conds == [True, True, True, False]
    ok, _ = routh_hurwitz([-1, -6, -11, -6])
    assert ok


def test_routh_hurwitz_quartic():
    ok, conds = routh_hurwitz(np.poly([-1, -2, -3, -4]))
    assert ok and len(conds) == 6
    ok, _ = routh_hurwitz(np.poly([-1, -2, 0.5 + 1j, 0.5 - 1j]))
    assert not ok
    with pytest.raises(ValueError):
        routh_hurwitz([1, 2, 3])


def test_routh_count_matches_roots():
    rng = np.random.default_rng(6)
    for _ in range(100):
        r = rng.standard_normal(4) * 2
        c = np.poly(r)
        assert routh_rhp_count(c) == int(np.sum(r > 0))


def test_third_order_poly_quartic():
    kp, kd, ki = 0.3, -0.4, 0.7
    s = catalog.third_order()
    P = assemble_pencil(s, PidGains.siso(kp, kd, ki))
    for lam in (0.5, 1.5 + 1j, -2.0):
        dense = np.polyval(third_order_poly(kp, kd, ki), lam)
        assert np.linalg.det(P(lam)) == pytest.approx(dense, rel=1e-10)


def test_third_order_count_matches_counter():
    rng = np.random.default_rng(12)
    s = catalog.third_order()
    for kp, kd in rng.uniform([-4, -7 / 3], [4, 3], (100, 2)):
        c = third_order_count(kp, kd)
        assert c == count_rhp_roots(assemble_pencil(s, PidGains.siso(kp, kd)))
        assert c == routh_rhp_count(third_order_poly(kp, kd))


def test_third_order_region_labels():
    assert str(third_order_region(-2.0, -2.0)) == "StrongStable"
    assert str(third_order_region(-1.5, -0.8)) == "RobustNoFilter"
    assert str(third_order_region(2.0, 1.2)) == "StableFragile"
    assert str(third_order_region(0.0, 0.0)) == "Unstable(1)"
    assert str(third_order_region(0.0, 2.0)) == "Unstable(2)"
    assert str(third_order_region(-3.0, 2.0)) == "Unstable(3)"
    assert str(third_order_region(0.0, 1.0)) == "Unstable(boundary)"


def test_crossing_frequency():
    assert crossing_frequency(-1.0) == 0.0
    assert crossing_frequency(0.0) is None
    w = crossing_frequency(-3.0)
    kp = -3.0
    kd = 1 / 3 + 2 / 3 * kp
    # on the crossing line the cubic vanishes at j w
    assert abs(np.polyval(third_order_poly(kp, kd), 1j * w)) < 1e-12


def test_region_map_and_labels():
    s = catalog.third_order()
    rm = region_map(s, [-2.0, 0.0], [-2.0, 2.0])
    assert rm.counts.tolist() == [[0, 3], [1, 2]]
    assert rm.labels[0][0] == "StrongStable"
    assert label_from_count(s, PidGains.siso(0.0, 0.0), None).boundary
    with pytest.raises(ValueError):
        region_map(catalog.ex52(), [0.0], [0.0])
