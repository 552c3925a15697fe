"""Composite certificate construction and sampled Lyapunov verification."""

import numpy as np
import pytest

from conftest import linear_gain_matrix, two_sub_candidates, two_sub_network
from hsgt import expr as ex
from hsgt.gains import GainMatrix, build_omega_path
from hsgt.kfun import KFun
from hsgt.lyapunov import (CertificateError, JumpSetMismatchError, SubsystemLyapunov,
                           VerifyTolerances, active_set, build_composite,
                           clarke_directional_bound, gain_matrix_from_candidates,
                           verify_composite_flow, verify_composite_jump,
                           verify_subsystem)
from hsgt.sampling import SamplerSpec


@pytest.fixture(scope="module")
def e1_like():
    net = two_sub_network()
    cands = two_sub_candidates()
    gm = gain_matrix_from_candidates(cands)
    cert = build_composite(cands, gm, net)
    return net, cands, gm, cert


def test_subsystem_verification_passes(e1_like, small_sampler):
    net, cands, _gm, _cert = e1_like
    for i in (0, 1):
        report = verify_subsystem(cands, i, net, small_sampler)
        assert report.passed, report.violations[:3]


def test_subsystem_verification_fails_for_strong_coupling(small_sampler):
    net = two_sub_network(coupling=2.0)
    cands = two_sub_candidates()  # gains fitted to the weak-coupling case
    report = verify_subsystem(cands, 0, net, small_sampler)
    assert not report.passed
    v = report.violations[0]
    assert v.measured > v.required


def test_subsystem_verification_fails_for_zero_dynamics(small_sampler):
    allowed = ("x_1", "u_1")
    from hsgt.hybrid import SubsystemSpec, compose_network
    spec = SubsystemSpec(dim=1, flow=[ex.Const(0.0)],
                         jump=[ex.parse("0.5*x_1", allowed)],
                         c_guard=ex.Const(-1.0), d_guard=ex.Const(1.0), name="still")
    net = compose_network([spec], input_dim=1)
    cand = SubsystemLyapunov(v=ex.parse("abs(x_1)", ("x_1",)),
                             psi1=KFun.identity(), psi2=KFun.identity(),
                             alpha=KFun.linear(0.5), lam=KFun.linear(0.5))
    report = verify_subsystem([cand], 0, net, small_sampler)
    assert not report.passed


def test_composite_certificate_matches_hand_values(e1_like):
    _net, _cands, _gm, cert = e1_like
    for t in (0.3, 1.0, 4.0):
        assert cert.lam(t) == pytest.approx(0.5 * t, rel=1e-12)
        assert cert.gamma(t) == pytest.approx(0.5 * t, rel=1e-12)
        assert cert.psi1(t) == pytest.approx(t, rel=1e-12)
        assert cert.psi2(t) == pytest.approx(t, rel=1e-12)
        assert cert.phi(t) == pytest.approx(t, rel=1e-12)
        assert cert.alpha(t) == pytest.approx(0.5 * t, rel=1e-9)
        for sigma in cert.path.sigmas:
            assert sigma(t) == pytest.approx(t, rel=1e-12)
    assert cert.value(np.array([1.0, 0.2])) == pytest.approx(1.0)


def test_single_subsystem_certificate():
    from hsgt.hybrid import SubsystemSpec, compose_network
    allowed = ("x_1", "u_1")
    spec = SubsystemSpec(dim=1, flow=[ex.parse("-x_1 + 0.25*u_1", allowed)],
                         jump=[ex.parse("0.5*x_1", allowed)],
                         c_guard=ex.Const(-1.0),
                         d_guard=ex.parse("1 - abs(x_1)", allowed), name="solo")
    net = compose_network([spec], input_dim=1)
    cand = SubsystemLyapunov(v=ex.parse("abs(x_1)", ("x_1",)),
                             psi1=KFun.identity(), psi2=KFun.identity(),
                             alpha=KFun.linear(0.5), lam=KFun.linear(0.5),
                             gamma_external=KFun.linear(0.5))
    gm = GainMatrix.from_rows([[None]])
    cert = build_composite([cand], gm, net, anchor=[2.0])
    # scaled level: sigma is 2 r, its inverse halves, the contraction commutes
    assert cert.path.sigmas[0](3.0) == pytest.approx(6.0)
    assert cert.lam(1.0) == pytest.approx(0.5)
    assert cert.value(np.array([3.0])) == pytest.approx(1.5)


def test_asymmetric_gains_still_identity_path():
    net = two_sub_network()
    cands = two_sub_candidates()
    cands[0].gamma_internal[1] = KFun.linear(0.5)
    cands[1].gamma_internal[0] = KFun.linear(0.25)
    gm = gain_matrix_from_candidates(cands)
    cert = build_composite(cands, gm, net)
    for t in (0.2, 1.0, 10.0):
        for sigma in cert.path.sigmas:
            assert sigma(t) == pytest.approx(t, rel=1e-12)
        assert cert.lam(t) == pytest.approx(0.5 * t, rel=1e-12)


def test_gain_disagreement_rejected():
    net = two_sub_network()
    cands = two_sub_candidates()
    gm = linear_gain_matrix([[0, 0.9], [0.9, 0]])
    with pytest.raises(CertificateError):
        build_composite(cands, gm, net)


def test_active_set(e1_like):
    _net, _cands, _gm, cert = e1_like
    assert active_set(cert, np.array([1.0, 0.2])) == [0]
    assert active_set(cert, np.array([0.5, 0.5])) == [0, 1]
    assert active_set(cert, np.array([0.0, 0.0])) == [0, 1]


def test_composite_flow_passes_with_margin(e1_like, small_sampler):
    net, _cands, _gm, cert = e1_like
    report = verify_composite_flow(cert, net, small_sampler)
    assert report.passed
    assert report.extras["empirical_alpha_min_ratio"] >= 0.5 - 1e-9


def test_composite_jump_passes(e1_like, small_sampler):
    net, _cands, _gm, cert = e1_like
    report = verify_composite_jump(cert, net, small_sampler)
    assert report.passed


def test_forged_alpha_fails(e1_like, small_sampler):
    net, _cands, _gm, cert = e1_like
    forged = cert.with_alpha(KFun.linear(10.0))
    report = verify_composite_flow(forged, net, small_sampler)
    assert not report.passed
    assert report.violations


def test_forged_lambda_fails(e1_like, small_sampler):
    net, _cands, _gm, cert = e1_like
    forged = cert.with_lambda(KFun.linear(0.1))
    report = verify_composite_jump(forged, net, small_sampler)
    assert not report.passed


def test_jump_passes_through_input_gain_branch(e1_like):
    # with a uselessly small contraction the jump inequality can only hold
    # through the input-gain branch, which dominates on this input box
    net, _cands, _gm, cert = e1_like
    forged = cert.with_lambda(KFun.linear(0.01))
    sampler = SamplerSpec(n_samples=800, box_radius=2.0, u_box=[(2.0, 3.0)], seed=0)
    report = verify_composite_jump(forged, net, sampler)
    assert report.passed


def test_built_gamma_is_class_k(e1_like):
    _net, _cands, _gm, cert = e1_like
    from hsgt.kfun import Classification, at_least
    assert at_least(cert.gamma.classification, Classification.CLASS_K)


def test_weakening_alpha_keeps_passing(e1_like, small_sampler):
    net, _cands, _gm, cert = e1_like
    assert verify_composite_flow(cert, net, small_sampler).passed
    weaker = cert.with_alpha(KFun.linear(0.25))
    assert verify_composite_flow(weaker, net, small_sampler).passed


def test_tie_point_checks_both_pieces(e1_like):
    net, cands, _gm, cert = e1_like
    x = np.array([0.5, 0.5])
    u = np.array([0.0])
    f_val = net.flow_value(x, u)
    env = dict(zip(net.state_vars(), map(float, x)))
    seed = dict(zip(net.state_vars(), map(float, f_val)))
    assert active_set(cert, x) == [0, 1]
    for i in (0, 1):
        _v, _lo, hi = ex.directional_bounds(cands[i].v, env, seed)
        assert hi == pytest.approx(-0.375)           # -0.75 * V at the tie
        assert hi <= -0.25 * cert.value(x) + 1e-12


def test_jump_set_mismatch_refused(small_sampler):
    from hsgt.hybrid import SubsystemSpec, compose_network
    allowed = ("x_1", "x_2", "u_1")
    one = SubsystemSpec(dim=1, flow=[ex.parse("-x_1", allowed)],
                        jump=[ex.parse("0.5*x_1", allowed)],
                        c_guard=ex.Const(-1.0),
                        d_guard=ex.parse("1 - x_1", allowed), name="one")
    two = SubsystemSpec(dim=1, flow=[ex.parse("-x_2", allowed)],
                        jump=[ex.parse("0.5*x_2", allowed)],
                        c_guard=ex.Const(-1.0), d_guard=ex.Const(1.0), name="two")
    net = compose_network([one, two], input_dim=1)
    cands = two_sub_candidates(gain=0.0)
    for cand in cands:
        cand.gamma_internal.clear()
    gm = gain_matrix_from_candidates(cands)
    cert = build_composite(cands, gm, net)
    with pytest.raises(JumpSetMismatchError):
        verify_composite_flow(cert, net, small_sampler)
    with pytest.raises(JumpSetMismatchError):
        verify_composite_jump(cert, net, small_sampler)


def test_sandwich_property(e1_like):
    _net, _cands, _gm, cert = e1_like
    rng = np.random.default_rng(3)
    for _ in range(1000):
        x = rng.uniform(-3.0, 3.0, 2)
        v = cert.value(x)
        mag = float(np.max(np.abs(x)))
        assert cert.psi1(mag) <= v + 1e-12
        assert v <= cert.psi2(mag) + 1e-12


def test_lambda_below_identity_on_grid(e1_like):
    _net, _cands, _gm, cert = e1_like
    for t in np.geomspace(1e-6, 1e6, 64):
        assert cert.lam(float(t)) < float(t)


@pytest.mark.parametrize("x, direction, expected", [
    ((1.0, 0.2), (-1.0, 0.0), -1.0),
    ((0.5, 0.5), (-1.0, -1.0), -1.0),
])
def test_clarke_bound_max_of_abs(x, direction, expected):
    pieces = [ex.parse("abs(x_1)", ("x_1", "x_2")), ex.parse("abs(x_2)", ("x_1", "x_2"))]
    env = {"x_1": x[0], "x_2": x[1]}
    seed = {"x_1": direction[0], "x_2": direction[1]}
    assert clarke_directional_bound(pieces, env, seed) == pytest.approx(expected)


def test_clarke_bound_smooth_quadratic():
    pieces = [ex.parse("x_1^2", ("x_1",))]
    assert clarke_directional_bound(pieces, {"x_1": 1.0}, {"x_1": 1.0}) == pytest.approx(2.0)


def test_pipeline_end_to_end(small_sampler):
    net = two_sub_network()
    cands = two_sub_candidates()
    gm = gain_matrix_from_candidates(cands)
    from hsgt.gains import small_gain_check
    verdict = small_gain_check(gm)
    assert verdict.holds
    for i in (0, 1):
        assert verify_subsystem(cands, i, net, small_sampler).passed
    cert = build_composite(cands, gm, net, verdict=verdict)
    assert verify_composite_flow(cert, net, small_sampler).passed
    assert verify_composite_jump(cert, net, small_sampler).passed
