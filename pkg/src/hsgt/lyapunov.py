"""Subsystem Lyapunov candidates, the composite max-type certificate, verifiers.

The composite function is the componentwise-scaled maximum
``V(x) = max_i sigma_i^{-1}(V_i(x_i))`` over a scaling path built from the
gain matrix.  Its flow condition is checked through the active indices of the
maximum: the inner product of any generalized gradient with the flow is
bounded by the worst active piece, because the gradient set lies in the
convex hull of the active pieces' gradients and the inner product is linear
over that hull.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import expr as ex
from .gains import GainMatrix, OmegaPath, SmallGainOptions, SmallGainVerdict, \
    build_omega_path, compose_phi
from .hybrid import NetworkSpec
from .kfun import Classification, KFun, at_least, compose, inverse_kfun, \
    kfun_to_json, pointwise_max, pointwise_min, require_class
from .reporting import VerificationReport, Violation
from .sampling import SamplerEmptyError, SamplerSpec, flow_set_samples, jump_set_samples


class CertificateError(Exception):
    pass


class JumpSetMismatchError(CertificateError):
    """Composite conditions require every subsystem to share one jump set."""


@dataclass
class VerifyTolerances:
    flow: float = 1e-7
    jump_rel: float = 1e-9
    jump_abs: float = 1e-12
    sandwich_rel: float = 1e-9


@dataclass
class SubsystemLyapunov:
    """Candidate data for one subsystem: V_i, sandwich bounds, rates, gains."""

    v: ex.Expr                        # function of this subsystem's state variables
    psi1: KFun
    psi2: KFun
    alpha: KFun                       # continuous positive definite decay rate
    lam: KFun                         # jump contraction, lam(s) < s for s > 0
    gamma_internal: Dict[int, KFun] = field(default_factory=dict)  # 0-based neighbor index
    gamma_external: KFun = field(default_factory=KFun.zero)

    def validate(self, grid: np.ndarray):
        require_class(self.psi1, Classification.CLASS_K_INF, "psi1")
        require_class(self.psi2, Classification.CLASS_K_INF, "psi2")
        require_class(self.alpha, Classification.POSITIVE_DEFINITE, "alpha")
        require_class(self.lam, Classification.POSITIVE_DEFINITE, "lambda")
        for r in grid:
            if self.lam(float(r)) >= float(r):
                raise CertificateError(f"lambda(s) < s fails at s={float(r)!r}")

    def internal_gain(self, j: int) -> KFun:
        return self.gamma_internal.get(j, KFun.zero())


def gain_matrix_from_candidates(cands: Sequence[SubsystemLyapunov]) -> GainMatrix:
    n = len(cands)
    rows = []
    for i in range(n):
        rows.append([cands[i].internal_gain(j) if j != i else None for j in range(n)])
    return GainMatrix.from_rows(rows)


@dataclass
class CompositeCertificate:
    """Certificate for the interconnection: scaling path and comparison functions."""

    path: OmegaPath
    phi: KFun
    phi_inv: KFun
    gamma: KFun
    lam: KFun
    psi1: KFun
    psi2: KFun
    alpha: KFun
    candidates: List[SubsystemLyapunov]
    net: NetworkSpec
    _v_fns: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.path.n

    def subsystem_value(self, i: int, x: np.ndarray) -> float:
        return self._v_fns[i](tuple(x))

    def component_levels(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.path.sigma_invs[i](self.subsystem_value(i, x))
                         for i in range(self.n)])

    def value(self, x: np.ndarray) -> float:
        return float(np.max(self.component_levels(x)))

    def with_alpha(self, alpha: KFun) -> "CompositeCertificate":
        return dataclasses.replace(self, alpha=alpha)

    def with_lambda(self, lam: KFun) -> "CompositeCertificate":
        return dataclasses.replace(self, lam=lam)

    def to_json(self) -> dict:
        return {
            "form": "gain-implication",
            "sigma": self.path.to_json(),
            "phi": kfun_to_json(self.phi),
            "gamma": kfun_to_json(self.gamma),
            "lambda": kfun_to_json(self.lam),
            "psi1": kfun_to_json(self.psi1),
            "psi2": kfun_to_json(self.psi2),
            "alpha": kfun_to_json(self.alpha),
        }


def active_set(cert: CompositeCertificate, x: np.ndarray, tol: float = 1e-9) -> List[int]:
    """Indices attaining the composite maximum, up to an absolute tolerance."""
    levels = cert.component_levels(np.asarray(x, dtype=float))
    top = float(np.max(levels))
    return [i for i in range(cert.n) if levels[i] >= top - tol]


def build_composite(cands: Sequence[SubsystemLyapunov], gm: GainMatrix,
                    net: NetworkSpec, anchor: Optional[Sequence[float]] = None,
                    grid: Optional[np.ndarray] = None,
                    verdict: Optional[SmallGainVerdict] = None,
                    options: Optional[SmallGainOptions] = None,
                    alpha: Optional[KFun] = None,
                    strictness: float = 1e-9) -> CompositeCertificate:
    """Assemble the interconnection certificate from subsystem candidates.

    Requires the small-gain condition for the supplied gain matrix; the
    matrix entries must agree with the candidates' internal gains.  The jump
    contraction combines the scaled cross gains with the scaled subsystem
    contractions and is checked below the identity on the grid.
    """
    cands = list(cands)
    if len(cands) != gm.n or gm.n != net.n:
        raise CertificateError("candidate list, gain matrix, and network sizes differ")
    opts = options or SmallGainOptions()
    g = opts.grid() if grid is None else np.asarray(grid, dtype=float)
    for i, cand in enumerate(cands):
        cand.validate(g[(g > 0) & (g < 1e9)])
        for j in range(gm.n):
            if i == j:
                continue
            _check_gain_agreement(cand.internal_gain(j), gm.entries[i][j], i, j)

    path = build_omega_path(gm, anchor, g, verdict=verdict, options=opts)
    phi = compose_phi(path)
    phi_inv = inverse_kfun(phi)

    externals = [compose(phi_inv, c.gamma_external) for c in cands
                 if not c.gamma_external.is_zero]
    gamma = pointwise_max(externals) if externals else KFun.zero()

    lam_terms: List[KFun] = []
    for i in range(gm.n):
        lam_terms.append(compose(path.sigma_invs[i], compose(cands[i].lam, path.sigmas[i])))
        for j in range(gm.n):
            if j != i and not gm.entries[i][j].is_zero:
                lam_terms.append(compose(path.sigma_invs[i],
                                         compose(gm.entries[i][j], path.sigmas[j])))
    lam = pointwise_max(lam_terms)
    for r in g:
        if lam(float(r)) > (1.0 - strictness) * float(r):
            raise CertificateError(f"jump contraction is not below identity at t={float(r)!r}")

    psi1 = pointwise_min([compose(path.sigma_invs[i], cands[i].psi1) for i in range(gm.n)])
    psi2 = pointwise_max([compose(path.sigma_invs[i], cands[i].psi2) for i in range(gm.n)])

    if alpha is None:
        alpha = _default_alpha(path, cands)
    require_class(alpha, Classification.POSITIVE_DEFINITE, "alpha")

    cert = CompositeCertificate(path=path, phi=phi, phi_inv=phi_inv, gamma=gamma,
                                lam=lam, psi1=psi1, psi2=psi2, alpha=alpha,
                                candidates=cands, net=net)
    cert._v_fns = [ex.compile_expr(c.v, net.state_vars()) for c in cands]
    return cert


def _check_gain_agreement(a: KFun, b: KFun, i: int, j: int):
    if a.is_zero != b.is_zero:
        raise CertificateError(f"candidate gain ({i + 1},{j + 1}) disagrees with the gain matrix")
    if a.is_zero:
        return
    for r in (0.37, 1.0, 8.5, 123.0):
        va, vb = a(r), b(r)
        if abs(va - vb) > 1e-9 * max(1.0, abs(va), abs(vb)):
            raise CertificateError(
                f"candidate gain ({i + 1},{j + 1}) disagrees with the gain matrix at s={r}")


def _sigma_inv_slope(path: OmegaPath, i: int, w: float) -> float:
    """Local slope of the i-th inverse path component near level w."""
    sigma_inv = path.sigma_invs[i]
    if sigma_inv.linear_slope is not None:
        return sigma_inv.linear_slope
    d = max(1e-6, 1e-6 * abs(w))
    if w - d > 0.0:
        return (sigma_inv(w + d) - sigma_inv(w - d)) / (2.0 * d)
    return (sigma_inv(w + d) - sigma_inv(w)) / d


def _default_alpha(path: OmegaPath, cands: Sequence[SubsystemLyapunov]) -> KFun:
    """Composite decay rate: worst scaled subsystem decay along the path.

    At level v the active subsystem runs at V_i = sigma_i(v) and decays at
    least at alpha_i(sigma_i(v)); the inverse-path slope converts that decay
    back to the composite level.  For nonlinear paths the slope is floored
    over a band around the level, mirroring the bounded-slope property used
    to justify the construction.
    """
    n = path.n
    band = (0.5, 0.75, 1.0, 1.5, 2.0)

    def fn(v: float) -> float:
        if v <= 0.0:
            return 0.0
        best = math.inf
        for i in range(n):
            w = path.sigmas[i](v)
            sigma_inv = path.sigma_invs[i]
            if sigma_inv.linear_slope is not None:
                slope = sigma_inv.linear_slope
            else:
                slope = min(_sigma_inv_slope(path, i, w * b) for b in band)
            best = min(best, slope * cands[i].alpha(w))
        return best
    return KFun.from_callable(fn, "composite decay rate")


def clarke_directional_bound(pieces: Sequence[ex.Expr], x: Dict[str, float],
                             direction: Dict[str, float], tie_tol: float = 1e-9) -> float:
    """Upper bound on gradient-direction inner products for a max of pieces.

    Evaluates each piece and keeps those within ``tie_tol`` of the maximum;
    the bound is the largest directional derivative among the active pieces,
    which dominates the whole generalized gradient of the max-composition.
    """
    if not pieces:
        raise CertificateError("clarke_directional_bound needs at least one piece")
    evals = [ex.directional_bounds(p, x, direction) for p in pieces]
    top = max(v for v, _lo, _hi in evals)
    tol = tie_tol * max(1.0, abs(top))
    return max(hi for v, _lo, hi in evals if v >= top - tol)


# ---------------------------------------------------------------------------
# verifiers


def verify_subsystem(cands: Sequence[SubsystemLyapunov], index: int, net: NetworkSpec,
                     sampler: SamplerSpec,
                     tolerances: Optional[VerifyTolerances] = None) -> VerificationReport:
    """Check one subsystem's sandwich, gain-implication flow, and jump conditions.

    Flow samples are drawn from the subsystem's flow set; the decay bound is
    only enforced where this subsystem's value dominates every gain-scaled
    neighbor value and the external gain of the input.
    """
    tol = tolerances or VerifyTolerances()
    cand = cands[index]
    report = VerificationReport(condition=f"subsystem-{index + 1}")
    v_fns = [ex.compile_expr(c.v, net.state_vars()) for c in cands]
    state_vars = net.state_vars()
    sub_slice = net.slices[index]
    jump_exprs = net.subsystems[index].jump

    try:
        flow_pts = flow_set_samples(net, sampler, sub=index)
        if net.jump_set_structurally_empty(index):
            jump_pts = []
            report.notes.append("empty jump set: jump condition is vacuous")
        else:
            jump_pts = jump_set_samples(
                net, dataclasses.replace(sampler, seed=sampler.seed + 1), sub=index)
    except SamplerEmptyError as exc:
        report.verdict = "inconclusive"
        report.notes.append(str(exc))
        return report

    checked_flow = 0
    for s_idx, (x, u) in enumerate(flow_pts):
        report.samples_tested += 1
        vals = tuple(x)
        vi = v_fns[index](vals)
        _check_sandwich(report, cand, x[sub_slice], vi, s_idx, tol)
        premise = max([cand.internal_gain(j)(v_fns[j](vals)) for j in range(net.n)
                       if j != index] + [cand.gamma_external(float(np.max(np.abs(u)))) if not
                                         cand.gamma_external.is_zero else 0.0])
        if vi < premise:
            continue
        checked_flow += 1
        report.samples_checked += 1
        f_val = net.flow_value(x, u)
        env = dict(zip(state_vars, map(float, x)))
        seed = dict(zip(state_vars, map(float, f_val)))
        _val, _lo, hi = ex.directional_bounds(cand.v, env, seed)
        bound = -cand.alpha(vi)
        report.add_margin(bound + tol.flow - hi)
        if hi > bound + tol.flow:
            report.violations.append(Violation(
                sample_index=s_idx, point=_point_json(x, u),
                measured=hi, required=bound,
                detail="flow decay under the gain premise"))

    for s_idx, (x, u) in enumerate(jump_pts):
        report.samples_tested += 1
        report.samples_checked += 1
        vals = tuple(x)
        vi = v_fns[index](vals)
        x_new = np.array(x, dtype=float)
        x_new[sub_slice] = [ex.evaluate(e, _full_env(net, x, u)) for e in jump_exprs]
        lhs = v_fns[index](tuple(x_new))
        rhs = max([cand.lam(vi)]
                  + [cand.internal_gain(j)(v_fns[j](vals)) for j in range(net.n) if j != index]
                  + ([cand.gamma_external(float(np.max(np.abs(u))))]
                     if not cand.gamma_external.is_zero else []))
        slack = max(tol.jump_abs, tol.jump_rel * abs(rhs))
        report.add_margin(rhs + slack - lhs)
        if lhs > rhs + slack:
            report.violations.append(Violation(
                sample_index=10_000_000 + s_idx, point=_point_json(x, u),
                measured=lhs, required=rhs, detail="jump contraction"))

    if checked_flow == 0:
        report.verdict = "inconclusive"
        report.notes.append("no flow sample satisfied the gain premise")
        return report
    return report.finalize()


def _check_sandwich(report, cand, x_sub, vi, s_idx, tol):
    mag = float(np.max(np.abs(x_sub)))
    lo, hi = cand.psi1(mag), cand.psi2(mag)
    slack = tol.sandwich_rel * max(1.0, abs(vi))
    if vi < lo - slack or vi > hi + slack:
        report.violations.append(Violation(
            sample_index=20_000_000 + s_idx,
            point={"x_i": [float(v) for v in x_sub]},
            measured=vi, required=lo if vi < lo else hi,
            detail="sandwich bound"))


def _full_env(net: NetworkSpec, x, u) -> dict:
    env = dict(zip(net.state_vars(), map(float, x)))
    env.update(zip(net.input_vars(), map(float, u)))
    return env


def _point_json(x, u) -> dict:
    return {"x": [float(v) for v in x], "u": [float(v) for v in u]}


def _require_shared_jump_set(net: NetworkSpec):
    if not net.jump_sets_equal:
        raise JumpSetMismatchError(
            "composite conditions assume one shared jump set; "
            "the configured subsystems have differing jump sets")


def verify_composite_flow(cert: CompositeCertificate, net: NetworkSpec,
                          sampler: SamplerSpec,
                          tolerances: Optional[VerifyTolerances] = None) -> VerificationReport:
    """Decay of the composite function along the flow, via active indices.

    For each flow sample past the input-gain threshold, every active index's
    scaled piece must decrease at rate alpha; checking the active pieces
    covers the full generalized gradient of the max-composition.  The
    measured decay floor is reported as the empirical rate.
    """
    tol = tolerances or VerifyTolerances()
    _require_shared_jump_set(net)
    report = VerificationReport(condition="composite-flow")
    try:
        pts = flow_set_samples(net, sampler)
    except SamplerEmptyError as exc:
        report.verdict = "inconclusive"
        report.notes.append(str(exc))
        return report

    state_vars = net.state_vars()
    alpha_ratio = math.inf
    for s_idx, (x, u) in enumerate(pts):
        report.samples_tested += 1
        value = cert.value(x)
        u_mag = float(np.max(np.abs(u))) if len(u) else 0.0
        if not cert.gamma.is_zero and value < cert.gamma(u_mag):
            continue
        report.samples_checked += 1
        f_val = net.flow_value(x, u)
        env = dict(zip(state_vars, map(float, x)))
        seed = dict(zip(state_vars, map(float, f_val)))
        required = -cert.alpha(value)
        worst = -math.inf
        worst_i = None
        for i in active_set(cert, x):
            w = cert.subsystem_value(i, x)
            slope = _sigma_inv_slope(cert.path, i, w) if w > 0 else \
                _sigma_inv_slope(cert.path, i, max(value, 1e-9))
            _v, _lo, hi = ex.directional_bounds(cert.candidates[i].v, env, seed)
            piece = slope * hi
            if piece > worst:
                worst, worst_i = piece, i
        report.add_margin(required + tol.flow - worst)
        if value > 0.0 and -worst / value < alpha_ratio:
            alpha_ratio = -worst / value
        if worst > required + tol.flow:
            report.violations.append(Violation(
                sample_index=s_idx, point=_point_json(x, u),
                measured=worst, required=required,
                detail=f"flow decay at active index {worst_i + 1}"))
    if math.isfinite(alpha_ratio):
        report.extras["empirical_alpha_min_ratio"] = alpha_ratio
    if report.samples_checked == 0:
        report.verdict = "inconclusive"
        report.notes.append("no flow sample passed the input-gain threshold")
        return report
    return report.finalize()


def verify_composite_jump(cert: CompositeCertificate, net: NetworkSpec,
                          sampler: SamplerSpec,
                          tolerances: Optional[VerifyTolerances] = None) -> VerificationReport:
    """Jump samples must satisfy V after the jump <= max(lam(V), gamma(|u|))."""
    tol = tolerances or VerifyTolerances()
    _require_shared_jump_set(net)
    report = VerificationReport(condition="composite-jump")
    if net.jump_set_structurally_empty():
        report.notes.append("empty jump set: jump condition is vacuous")
        return report.finalize()
    try:
        pts = jump_set_samples(net, sampler)
    except SamplerEmptyError as exc:
        report.verdict = "inconclusive"
        report.notes.append(str(exc))
        return report

    for s_idx, (x, u) in enumerate(pts):
        report.samples_tested += 1
        report.samples_checked += 1
        value = cert.value(x)
        u_mag = float(np.max(np.abs(u))) if len(u) else 0.0
        lhs = cert.value(net.jump_value(x, u))
        rhs = cert.lam(value)
        if not cert.gamma.is_zero:
            rhs = max(rhs, cert.gamma(u_mag))
        slack = max(tol.jump_abs, tol.jump_rel * abs(rhs))
        report.add_margin(rhs + slack - lhs)
        if lhs > rhs + slack:
            report.violations.append(Violation(
                sample_index=s_idx, point=_point_json(x, u),
                measured=lhs, required=rhs, detail="composite jump contraction"))
    return report.finalize()
