"""Transformations between the two certificate forms, with sampled verification.

The gain-implication form bounds the decrease by functions of the certificate
value; the norm-threshold form bounds it by functions of the state norm once
the state dominates a threshold gain of the input.  Both directions are
constructive here: the jump contraction is majorized by an explicitly built
strictly-increasing function, the threshold gain is composed from inverses,
and the jump decay of the norm-threshold form is fitted from sphere minima of
the certificate's one-step decrease.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import expr as ex
from .hybrid import NetworkSpec
from .kfun import (Classification, KFun, at_least, compose, inverse_kfun,
                   kfun_to_json, pointwise_max, require_class)
from .lyapunov import (CompositeCertificate, VerifyTolerances, _sigma_inv_slope,
                       active_set)
from .reporting import VerificationReport, Violation
from .sampling import SamplerEmptyError, SamplerSpec, flow_set_samples, \
    jump_set_samples, sphere_directions


class TransformError(Exception):
    pass


def majorize_lambda(lam: KFun, grid: Sequence[float]) -> KFun:
    """Strictly increasing majorant of a below-identity contraction.

    On each grid point the majorant averages the running maximum of the
    contraction with the identity, which keeps it strictly between the
    contraction and the identity; values between grid points interpolate
    linearly and stay monotone.
    """
    xs = [float(r) for r in grid if r > 0.0]
    if not xs or any(b <= a for a, b in zip(xs, xs[1:])):
        raise TransformError("majorization grid must be positive and increasing")
    running = 0.0
    ys = []
    for r in xs:
        v = lam(r)
        if v >= r:
            raise TransformError(f"contraction is not below the identity at s={r!r}")
        if v < 0.0:
            raise TransformError(f"contraction is negative at s={r!r}")
        running = max(running, v)
        ys.append(0.5 * (running + r))
    rho = KFun.piecewise_linear(xs, ys, "identity-averaged majorant")
    if not at_least(rho.classification, Classification.CLASS_K_INF):
        raise TransformError("majorant failed class-Kinf checks")
    return rho


@dataclass
class WFormCertificate:
    """Norm-threshold certificate sharing the composite evaluator."""

    v_form: CompositeCertificate
    net: NetworkSpec
    psi1_bar: KFun
    psi2_bar: KFun
    gamma_bar: KFun
    alpha1_bar: KFun
    alpha2_bar: KFun
    rho: KFun

    def value(self, x: np.ndarray) -> float:
        return self.v_form.value(x)

    def to_json(self) -> dict:
        return {
            "form": "norm-threshold",
            "psi1": kfun_to_json(self.psi1_bar),
            "psi2": kfun_to_json(self.psi2_bar),
            "gamma_bar": kfun_to_json(self.gamma_bar),
            "alpha1_bar": kfun_to_json(self.alpha1_bar),
            "alpha2_bar": kfun_to_json(self.alpha2_bar),
            "rho": kfun_to_json(self.rho),
        }


def _fit_jump_decay(cert: CompositeCertificate, rho: KFun, box_radius: float,
                    seed: int, radii_points: int = 40, directions: int = 64) -> KFun:
    """Largest increasing lower bound of the one-step decrease over state spheres."""
    rng = np.random.default_rng(seed)
    dim = cert.net.state_dim
    radii = np.geomspace(box_radius * 1e-4, box_radius, radii_points)
    dirs = sphere_directions(dim, directions, rng)
    minima = []
    for r in radii:
        worst = math.inf
        for d in dirs:
            x = d * r
            v = cert.value(x)
            worst = min(worst, v - rho(v))
        minima.append(worst)
    lower = list(minima)
    for i in range(len(lower) - 2, -1, -1):
        lower[i] = min(lower[i], lower[i + 1])
    values = []
    prev = 0.0
    for b in lower:
        v = max(b * (1.0 - 1e-9), prev * (1.0 + 1e-12))
        values.append(v)
        prev = v
    if values[0] <= 0.0:
        raise TransformError("fitted jump decay is not positive on the sphere grid")
    fit = KFun.piecewise_linear(list(radii), values, "fitted jump decay over spheres")
    require_class(fit, Classification.CLASS_K_INF, "fitted jump decay")
    return fit


def to_w_form(cert: CompositeCertificate, net: NetworkSpec, sampler: SamplerSpec,
              grid: Optional[Sequence[float]] = None,
              tolerances: Optional[VerifyTolerances] = None
              ) -> Tuple[WFormCertificate, VerificationReport]:
    """Derive the norm-threshold form from a verified gain-implication form.

    The evaluator is kept as-is rather than rescaled, so the jump decay is
    the empirically fitted sphere minimum of ``V - rho(V)`` instead of a
    rescaled unbounded rate; the fitted bound is what the sampled check
    enforces.
    """
    tol = tolerances or VerifyTolerances()
    g = np.geomspace(1e-8, 1e8, 129) if grid is None else np.asarray(grid, dtype=float)
    rho = majorize_lambda(cert.lam, g)
    rho_inv = inverse_kfun(rho)
    psi1_inv = inverse_kfun(cert.psi1)
    if cert.gamma.is_zero:
        gamma_bar = KFun.zero()
    else:
        gamma_bar = compose(psi1_inv, compose(rho_inv, cert.gamma))
    alpha1_bar = compose(cert.alpha, cert.psi1)
    require_class(alpha1_bar, Classification.POSITIVE_DEFINITE, "flow decay")
    alpha2_bar = _fit_jump_decay(cert, rho, sampler.box_radius, sampler.seed + 7)

    wf = WFormCertificate(v_form=cert, net=net, psi1_bar=cert.psi1, psi2_bar=cert.psi2,
                          gamma_bar=gamma_bar, alpha1_bar=alpha1_bar,
                          alpha2_bar=alpha2_bar, rho=rho)
    report = _verify_w_form(wf, net, sampler, tol)
    return wf, report


def _verify_w_form(wf: WFormCertificate, net: NetworkSpec, sampler: SamplerSpec,
                   tol: VerifyTolerances) -> VerificationReport:
    cert = wf.v_form
    report = VerificationReport(condition="norm-threshold-form")
    state_vars = net.state_vars()
    try:
        flow_pts = flow_set_samples(net, sampler)
        if net.jump_set_structurally_empty():
            jump_pts = []
            report.notes.append("empty jump set: jump condition is vacuous")
        else:
            jump_pts = jump_set_samples(net,
                                        dataclasses.replace(sampler, seed=sampler.seed + 3))
    except SamplerEmptyError as exc:
        report.verdict = "inconclusive"
        report.notes.append(str(exc))
        return report

    for s_idx, (x, u) in enumerate(flow_pts):
        report.samples_tested += 1
        x_mag = float(np.max(np.abs(x)))
        u_mag = float(np.max(np.abs(u))) if len(u) else 0.0
        if not wf.gamma_bar.is_zero and x_mag < wf.gamma_bar(u_mag):
            continue
        report.samples_checked += 1
        f_val = net.flow_value(x, u)
        env = dict(zip(state_vars, map(float, x)))
        seed = dict(zip(state_vars, map(float, f_val)))
        worst = -math.inf
        for i in active_set(cert, x):
            w = cert.subsystem_value(i, x)
            slope = _sigma_inv_slope(cert.path, i, w if w > 0 else max(x_mag, 1e-9))
            _v, _lo, hi = ex.directional_bounds(cert.candidates[i].v, env, seed)
            worst = max(worst, slope * hi)
        required = -wf.alpha1_bar(x_mag)
        report.add_margin(required + tol.flow - worst)
        if worst > required + tol.flow:
            report.violations.append(Violation(
                sample_index=s_idx, point={"x": [float(v) for v in x],
                                           "u": [float(v) for v in u]},
                measured=worst, required=required, detail="norm-threshold flow decay"))

    for s_idx, (x, u) in enumerate(jump_pts):
        report.samples_tested += 1
        x_mag = float(np.max(np.abs(x)))
        u_mag = float(np.max(np.abs(u))) if len(u) else 0.0
        if not wf.gamma_bar.is_zero and x_mag < wf.gamma_bar(u_mag):
            continue
        report.samples_checked += 1
        drop = wf.value(net.jump_value(x, u)) - wf.value(x)
        required = -wf.alpha2_bar(x_mag)
        report.add_margin(required + tol.flow - drop)
        if drop > required + tol.flow:
            report.violations.append(Violation(
                sample_index=1_000_000 + s_idx,
                point={"x": [float(v) for v in x], "u": [float(v) for v in u]},
                measured=drop, required=required, detail="norm-threshold jump decrease"))
    if report.samples_checked == 0:
        report.verdict = "inconclusive"
        report.notes.append("no sample passed the norm threshold")
        return report
    return report.finalize()


def to_v_form(wf: WFormCertificate, sampler: SamplerSpec,
              grid: Optional[Sequence[float]] = None,
              tolerances: Optional[VerifyTolerances] = None
              ) -> Tuple[KFun, KFun, VerificationReport]:
    """Recover gain-implication data (gamma, lambda) from the norm-threshold form.

    The contraction is the identity minus an explicitly built increasing
    decrement: the fitted jump decay transported through the upper sandwich
    bound, capped at half the identity and monotonized on the grid.  The jump
    inequality is re-checked against the shared evaluator, covering states
    below the input threshold through a fitted, majorized input gain.
    """
    tol = tolerances or VerifyTolerances()
    net = wf.net
    cert = wf.v_form
    g = np.geomspace(1e-8, 1e8, 129) if grid is None else np.asarray(grid, dtype=float)

    gamma = compose(wf.psi2_bar, wf.gamma_bar) if not wf.gamma_bar.is_zero else KFun.zero()

    psi2_inv = inverse_kfun(wf.psi2_bar)
    xs = [float(r) for r in g if r > 0.0]
    running = 0.0
    ys = []
    for r in xs:
        m = min(wf.alpha2_bar(psi2_inv(r)), 0.5 * r)
        running = max(running, m)
        ys.append(running)
    decrement = KFun.piecewise_linear(xs, ys, "capped jump decrement")
    lam_fn = lambda t: t - decrement(t)
    lam = KFun.from_callable(lam_fn, "identity minus capped decrement")

    report = VerificationReport(condition="gain-implication-jump")
    if not at_least(lam.classification, Classification.CLASS_K):
        report.verdict = "inconclusive"
        report.notes.append("identity minus the decrement failed monotonicity checks")
        return gamma, lam, report
    for r in g:
        if lam(float(r)) >= float(r):
            raise TransformError(f"recovered contraction not below identity at t={float(r)!r}")

    gamma_tilde = _fit_jump_input_gain(wf, gamma, sampler)

    if net.jump_set_structurally_empty():
        report.notes.append("empty jump set: jump condition is vacuous")
        return gamma, lam, report.finalize()
    try:
        pts = jump_set_samples(net, dataclasses.replace(sampler, seed=sampler.seed + 5))
    except SamplerEmptyError as exc:
        report.verdict = "inconclusive"
        report.notes.append(str(exc))
        return gamma, lam, report
    for s_idx, (x, u) in enumerate(pts):
        report.samples_tested += 1
        report.samples_checked += 1
        u_mag = float(np.max(np.abs(u))) if len(u) else 0.0
        lhs = wf.value(net.jump_value(x, u))
        rhs = lam(wf.value(x))
        if not gamma_tilde.is_zero:
            rhs = max(rhs, gamma_tilde(u_mag))
        slack = max(tol.flow, tol.jump_rel * abs(rhs))
        report.add_margin(rhs + slack - lhs)
        if lhs > rhs + slack:
            report.violations.append(Violation(
                sample_index=s_idx, point={"x": [float(v) for v in x],
                                           "u": [float(v) for v in u]},
                measured=lhs, required=rhs, detail="recovered jump inequality"))
    report.extras["gamma_tilde"] = kfun_to_json(gamma_tilde)
    return gamma, lam, report.finalize()


def _fit_jump_input_gain(wf: WFormCertificate, gamma: KFun, sampler: SamplerSpec,
                         levels: int = 24, directions: int = 16) -> KFun:
    """Majorized input gain covering jump states below the input threshold.

    For each input level the post-jump value is maximized over sampled jump
    states whose value sits below the recovered gain of that level; running
    maximization plus a small inflation makes the fit strictly increasing.
    The combined gain is the pointwise max with the recovered gain.
    """
    net = wf.net
    if gamma.is_zero or sampler.u_box is None or net.jump_set_structurally_empty():
        return gamma
    u_lo, u_hi = sampler.u_low_high(net.input_dim)
    u_scale = float(np.max(np.abs(np.stack([u_lo, u_hi]))))
    if u_scale <= 0.0:
        return gamma
    rng = np.random.default_rng(sampler.seed + 11)
    try:
        pool = jump_set_samples(net, dataclasses.replace(
            sampler, seed=sampler.seed + 13,
            n_samples=max(256, sampler.n_samples // 8)))
    except SamplerEmptyError:
        return gamma
    xs = np.geomspace(u_scale * 1e-3, u_scale, levels)
    u_dirs = sphere_directions(net.input_dim, directions, rng)
    running = 0.0
    values = []
    for level in xs:
        threshold = gamma(float(level))
        best = 0.0
        for x, _u in pool:
            if wf.value(x) > threshold:
                continue
            for d in u_dirs:
                u = d * level
                best = max(best, wf.value(net.jump_value(x, u)))
        running = max(running, best)
        values.append(running)
    inflated = [v * (1.0 + 1e-6) + 1e-9 * x for v, x in zip(values, xs)]
    fitted = KFun.piecewise_linear(list(xs), inflated, "majorized post-jump input gain")
    return pointwise_max([fitted, gamma])
