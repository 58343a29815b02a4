import json

import numpy as np
import pytest

from strongstab import catalog
from strongstab.model import DelaySystem, LoadError, PidGains
from strongstab.robust import (UncBlock, UncertaintySet, extreme_points, load_uncertainty,
                               realize_system, sample_ball, sampled_worst_case)

# rightmost root of lam + exp(-1.5 lam) (principal Lambert W branch)
WORST_DELAY_ABSCISSA = -0.021855823943715012


def scalar(a0=-2.0):
    return DelaySystem(A=([[a0]],), delays=(), B=[[1.0]], C=[[1.0]])


def test_zero_perturbation_is_nominal():
    s = catalog.ex52()
    unc = UncertaintySet((UncBlock("A0", np.ones((6, 1)), np.ones((1, 6))),),
                         (0.01, 0.01, 0.1))
    t = realize_system(s, unc)
    for a, b in zip(s.A, t.A):
        np.testing.assert_array_equal(a, b)
    assert t.delays == s.delays


def test_affine_scalar():
    unc = UncertaintySet((UncBlock("A0", [[1.0]], [[1.0]]),))
    t = realize_system(scalar(), unc, [np.array([[1.0]])])
    assert t.A[0][0, 0] == -1.0


def test_delay_shift():
    s = catalog.ex52()
    unc = UncertaintySet((), (0.02, 0.02, 0.2))
    t = realize_system(s, unc, [], [0.01, -0.01, 0.1])
    np.testing.assert_allclose(t.delays, (0.12, 0.20, 1.1), rtol=0, atol=1e-15)


def test_bound_violations():
    unc = UncertaintySet((UncBlock("A0", [[1.0]], [[1.0]]),))
    with pytest.raises(ValueError, match="exceeds 1"):
        realize_system(scalar(), unc, [np.array([[1.5]])])
    s = catalog.ex52()
    unc = UncertaintySet((), (0.02, 0.02, 0.2))
    with pytest.raises(ValueError, match="exceeds its bound"):
        realize_system(s, unc, [], [0.03, 0.0, 0.0])
    with pytest.raises(LoadError):
        UncertaintySet((), (-0.1,))
    with pytest.raises(LoadError, match="smaller than the delay"):
        UncertaintySet((), (0.2, 0.02, 0.2)).validate_for(s)
    with pytest.raises(LoadError, match="do not fit"):
        UncertaintySet((UncBlock("B", np.ones((5, 1)), np.ones((1, 3))),)).validate_for(s)


def test_sample_ball_inside_and_uniform_radius():
    rng = np.random.default_rng(1)
    norms = np.array([np.linalg.norm(sample_ball((2, 3), rng)) for _ in range(4000)])
    assert norms.max() <= 1 + 1e-12
    # radius law P(|delta| <= t) = t^6 on the 6-dimensional ball
    assert np.mean(norms <= 0.8) == pytest.approx(0.8**6, abs=0.03)


def test_scalar_worst_case():
    unc = UncertaintySet((UncBlock("A0", [[1.0]], [[1.0]]),))
    wc = sampled_worst_case(scalar(), unc, PidGains.siso(), Nsamples=20, seed=0)
    assert wc.abscissa_lb == pytest.approx(-1.0, abs=1e-12)
    assert wc.nominal_abscissa == pytest.approx(-2.0, abs=1e-12)
    deltas, _ = wc.argmax_abscissa
    assert deltas[0][0, 0] == pytest.approx(1.0)


def test_delay_worst_case():
    s = DelaySystem(A=([[0.0]], [[-1.0]]), delays=(1.0,), B=[[1.0]], C=[[1.0]])
    unc = UncertaintySet((), (0.5,))
    wc = sampled_worst_case(s, unc, PidGains.siso(), Nsamples=10, seed=3)
    assert wc.abscissa_lb == pytest.approx(WORST_DELAY_ABSCISSA, abs=1e-9)
    assert wc.abscissa_lb < 0
    assert wc.argmax_abscissa[1][0] == pytest.approx(0.5)


def test_degenerate_set_equals_nominal():
    s, g = catalog.third_order(), PidGains.siso(-2.0, -2.0)
    unc = UncertaintySet((UncBlock("A0", np.zeros((3, 1)), np.zeros((1, 3))),))
    wc = sampled_worst_case(s, unc, g, Nsamples=5)
    assert wc.abscissa_lb == wc.nominal_abscissa
    assert wc.alpha_ps_lb == wc.nominal_alpha


def test_lower_bound_properties():
    s, g = catalog.third_order(), PidGains.siso(-2.0, -2.0)
    unc = UncertaintySet((UncBlock("A0", 0.1 * np.eye(3)[:, :1], np.ones((1, 3))),
                          UncBlock("B", [[0.1], [0.0], [0.0]], [[1.0]])))
    small = sampled_worst_case(s, unc, g, Nsamples=5, seed=7)
    big = sampled_worst_case(s, unc, g, Nsamples=15, seed=7)
    assert big.abscissa_lb >= small.abscissa_lb
    assert big.alpha_ps_lb >= small.alpha_ps_lb
    assert small.abscissa_lb >= small.nominal_abscissa
    for (deltas, _), v in big.samples:
        assert all(np.linalg.norm(d) <= 1 + 1e-12 for d in deltas)
        if v is not None:
            assert v[0] <= big.abscissa_lb
    # a perturbation of B moves the nonzero eigenvalue kd * C B of B Kd C
    wc = sampled_worst_case(s, unc, PidGains.siso(-2.0, 0.5), Nsamples=5, seed=7)
    assert wc.alpha_ps_lb == pytest.approx(0.5 * (1 + 0.05), rel=1e-12)
    assert wc.nominal_alpha == pytest.approx(0.5)


def test_shared_delta_blocks():
    s = catalog.third_order()
    unc = UncertaintySet((UncBlock("A0", np.eye(3)[:, :1], np.eye(3)[:1], delta="k"),
                          UncBlock("B", [[1.0], [0.0], [0.0]], [[1.0]], delta="k")))
    assert unc.groups == ["k"]
    t = realize_system(s, unc, [np.array([[0.5]])])
    assert t.A[0][0, 0] == s.A[0][0, 0] + 0.5
    assert t.B[0, 0] == s.B[0, 0] + 0.5


def test_extreme_points_cover_signs_and_delays():
    s = DelaySystem(A=([[0.0]], [[-1.0]]), delays=(1.0,), B=[[1.0]], C=[[1.0]])
    unc = UncertaintySet((UncBlock("A1", [[2.0]], [[1.0]]),), (0.3,))
    pts = extreme_points(s, unc)
    vals = {(float(d[0][0, 0]), float(dt[0])) for d, dt in pts}
    for a in (0.0, 1.0, -1.0):
        for b in (0.0, 0.3, -0.3):
            assert (a, b) in vals


def test_uncertainty_json_roundtrip(tmp_path):
    unc = UncertaintySet((UncBlock("Ak:1", [[1.0]], [[0.5]]),), (0.1,))
    path = tmp_path / "unc.json"
    path.write_text(json.dumps(unc.to_dict()))
    back = load_uncertainty(path)
    assert back.to_dict() == unc.to_dict()
    path.write_text(json.dumps({"blocks": [{"target": "Z", "G": [[1]], "H": [[1]]}]}))
    with pytest.raises(LoadError):
        load_uncertainty(path)
    with pytest.raises(ValueError):
        sampled_worst_case(scalar(), UncertaintySet(), PidGains.siso(), Nsamples=0)
