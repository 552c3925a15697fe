"""Hybrid time domains, signals, network composition, and trajectory simulation.

States evolve by a fixed-step RK4 integration of the composed flow map while
the flow-set guard holds, and by the composed jump map (applied per subsystem,
identity outside that subsystem's jump set) when the jump-set guard holds.
Guard crossings inside a step are located by bisecting the step.  Membership
of a guard set uses the convention ``guard(x, u) <= 0``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, IO, List, Optional, Sequence, Tuple

import numpy as np

from . import expr as ex


class HybridError(Exception):
    pass


class DomainError(HybridError):
    pass


class SimulationError(HybridError):
    pass


# ---------------------------------------------------------------------------
# time domains and signals


@dataclass(frozen=True)
class HybridTimeDomain:
    """Ordered intervals ``[t_k, t_{k+1}] x {k}`` with consecutive jump counters."""

    intervals: Tuple[Tuple[float, float, int], ...]

    def __post_init__(self):
        if not self.intervals:
            raise DomainError("a hybrid time domain needs at least one interval")
        t0, _, k0 = self.intervals[0]
        if t0 != 0.0 or k0 != 0:
            raise DomainError("the first interval must start at (0, 0)")
        prev_end, prev_k = None, None
        for lo, hi, k in self.intervals:
            if hi < lo:
                raise DomainError(f"interval [{lo}, {hi}] has negative length")
            if prev_k is not None:
                if k != prev_k + 1:
                    raise DomainError("jump counters must increase by exactly one")
                if lo != prev_end:
                    raise DomainError("intervals must chain at the jump times")
            prev_end, prev_k = hi, k

    @property
    def jump_count(self) -> int:
        return len(self.intervals) - 1

    @property
    def max_tk(self) -> float:
        lo, hi, k = self.intervals[-1]
        return hi + k

    def contains(self, t: float, k: int, tol: float = 1e-12) -> bool:
        for lo, hi, kk in self.intervals:
            if kk == k and lo - tol <= t <= hi + tol:
                return True
        return False


@dataclass
class HybridSignal:
    """Sampled values on a hybrid time domain; both endpoints kept at jumps."""

    domain: HybridTimeDomain
    times: List[np.ndarray]       # one strictly increasing array per interval
    values: List[np.ndarray]      # matching (n_samples, dim) arrays

    def __post_init__(self):
        if len(self.times) != len(self.domain.intervals) or len(self.values) != len(self.times):
            raise DomainError("one sample block per domain interval is required")
        for (lo, hi, _k), ts, vs in zip(self.domain.intervals, self.times, self.values):
            if len(ts) != len(vs) or len(ts) == 0:
                raise DomainError("each interval needs matching nonempty samples")
            if np.any(np.diff(ts) <= 0.0):
                raise DomainError("sample times must strictly increase inside an interval")
            if ts[0] < lo - 1e-12 or ts[-1] > hi + 1e-12:
                raise DomainError("samples outside their interval")

    @property
    def dim(self) -> int:
        return self.values[0].shape[1]

    def iter_samples(self):
        """Yield (t, k, value_row, is_jump_point) over all stored samples."""
        last = len(self.domain.intervals) - 1
        for idx, ((_lo, _hi, k), ts, vs) in enumerate(
                zip(self.domain.intervals, self.times, self.values)):
            for j in range(len(ts)):
                jump_point = idx < last and j == len(ts) - 1
                yield float(ts[j]), k, vs[j], jump_point

    def value_at(self, t: float, k: int) -> np.ndarray:
        for (_lo, _hi, kk), ts, vs in zip(self.domain.intervals, self.times, self.values):
            if kk != k:
                continue
            if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
                continue
            j = int(np.searchsorted(ts, t))
            if j < len(ts) and abs(ts[j] - t) <= 1e-12:
                return vs[j].copy()
            if j == 0:
                return vs[0].copy()
            if j >= len(ts):
                return vs[-1].copy()
            w = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
            return (1.0 - w) * vs[j - 1] + w * vs[j]
        raise DomainError(f"point (t={t}, k={k}) is outside the signal domain")


def sup_norm(signal: HybridSignal, upto: Tuple[float, int]) -> float:
    """Supremum norm of the signal over points no later than ``upto``.

    Ordering of hybrid times is by the sum t + k.  The continuous part is a
    sample maximum standing in for an essential supremum; jump points are
    maximized exactly.  Vector samples are measured in the max norm.
    """
    t, k = upto
    if not signal.domain.contains(t, k):
        raise DomainError(f"point (t={t}, k={k}) is outside the signal domain")
    cutoff = t + k
    best_flow = 0.0
    best_jump = 0.0
    for s, l, row, jump_point in signal.iter_samples():
        if s + l > cutoff + 1e-12:
            continue
        mag = float(np.max(np.abs(row)))
        if jump_point:
            best_jump = max(best_jump, mag)
        else:
            best_flow = max(best_flow, mag)
    return max(best_flow, best_jump)


def restrict(signal: HybridSignal, frm: Tuple[float, int], to: Tuple[float, int]) -> HybridSignal:
    """Zero the signal outside the window [frm, to]; the domain is unchanged."""
    for point in (frm, to):
        if not signal.domain.contains(*point):
            raise DomainError(f"window endpoint {point} is outside the signal domain")
    lo = frm[0] + frm[1]
    hi = to[0] + to[1]
    if lo > hi:
        raise DomainError("window endpoints are out of order")
    new_values = []
    for (_lo, _hi, k), ts, vs in zip(signal.domain.intervals, signal.times, signal.values):
        sums = ts + k
        mask = (sums >= lo - 1e-12) & (sums <= hi + 1e-12)
        out = vs.copy()
        out[~mask] = 0.0
        new_values.append(out)
    return HybridSignal(domain=signal.domain, times=[t.copy() for t in signal.times],
                        values=new_values)


# ---------------------------------------------------------------------------
# subsystem and network specifications


@dataclass
class SubsystemSpec:
    """One hybrid subsystem: flow/jump maps over the global state plus guards."""

    dim: int
    flow: List[ex.Expr]
    jump: List[ex.Expr]
    c_guard: ex.Expr
    d_guard: ex.Expr
    name: str = ""

    def validate(self):
        if len(self.flow) != self.dim or len(self.jump) != self.dim:
            raise HybridError(
                f"subsystem '{self.name}': flow/jump maps must have {self.dim} components")


class InputSignal:
    """External input as expressions in (t, k) or a piecewise-constant table."""

    def __init__(self, fn: Callable[[float, int], list], dim: int, description: str):
        self._fn = fn  # returns a plain list of floats
        self.dim = dim
        self.description = description

    def __call__(self, t: float, k: int) -> np.ndarray:
        return np.asarray(self._fn(t, k))

    def values(self, t: float, k: int) -> list:
        return self._fn(t, k)

    @staticmethod
    def constant(values: Sequence[float]) -> "InputSignal":
        vals = [float(v) for v in values]
        return InputSignal(lambda t, k: vals, len(vals), f"constant {vals}")

    @staticmethod
    def zero(dim: int) -> "InputSignal":
        vals = [0.0] * dim
        return InputSignal(lambda t, k: vals, dim, "zero")

    @staticmethod
    def from_exprs(exprs: Sequence[ex.Expr]) -> "InputSignal":
        compiled = [ex.compile_expr(e, ("t", "k")) for e in exprs]

        def fn(t: float, k: int) -> list:
            vals = (t, float(k))
            return [c(vals) for c in compiled]
        return InputSignal(fn, len(compiled), "expression input")

    @staticmethod
    def piecewise(times: Sequence[float], values: Sequence[Sequence[float]]) -> "InputSignal":
        ts = [float(v) for v in times]
        vs = [[float(v) for v in row] for row in values]
        if len(ts) != len(vs) or not ts:
            raise HybridError("piecewise input needs matching nonempty times and values")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise HybridError("piecewise input times must strictly increase")
        from bisect import bisect_right

        def fn(t: float, k: int) -> list:
            return vs[max(bisect_right(ts, t) - 1, 0)]
        return InputSignal(fn, len(vs[0]), "piecewise-constant input")


@dataclass
class NetworkSpec:
    """Composed network: intersection flow set, union jump set, stacked maps."""

    subsystems: List[SubsystemSpec]
    input_dim: int
    state_dim: int = 0
    slices: List[slice] = field(default_factory=list)
    var_order: Tuple[str, ...] = ()
    jump_sets_equal: bool = True
    warnings: List[str] = field(default_factory=list)
    _flow_fns: list = field(default_factory=list, repr=False)
    _jump_fns: list = field(default_factory=list, repr=False)
    _c_fns: list = field(default_factory=list, repr=False)
    _d_fns: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return len(self.subsystems)

    def state_vars(self) -> Tuple[str, ...]:
        return self.var_order[:self.state_dim]

    def input_vars(self) -> Tuple[str, ...]:
        return self.var_order[self.state_dim:]

    def _vals(self, x, u) -> list:
        return [float(v) for v in x] + [float(v) for v in u]

    def c_value(self, x, u, sub: Optional[int] = None) -> float:
        return self.c_raw(self._vals(x, u), sub)

    def d_value(self, x, u, sub: Optional[int] = None) -> float:
        return self.d_raw(self._vals(x, u), sub)

    def c_raw(self, vals: list, sub: Optional[int] = None) -> float:
        if sub is not None:
            return self._c_fns[sub](vals)
        return max(fn(vals) for fn in self._c_fns)

    def d_raw(self, vals: list, sub: Optional[int] = None) -> float:
        if sub is not None:
            return self._d_fns[sub](vals)
        return min(fn(vals) for fn in self._d_fns)

    def in_C(self, x, u) -> bool:
        return self.c_value(x, u) <= 0.0

    def in_D(self, x, u) -> bool:
        return self.d_value(x, u) <= 0.0

    def flow_value(self, x, u) -> np.ndarray:
        vals = self._vals(x, u)
        return np.array([fn(vals) for fn in self._flow_fns])

    def jump_value(self, x, u) -> np.ndarray:
        return np.array(self.jump_raw(self._vals(x, u)))

    def jump_raw(self, vals: list) -> list:
        """Composed jump: each subsystem maps only when inside its own jump set."""
        out = list(vals[:self.state_dim])
        for i, sl in enumerate(self.slices):
            if self._d_fns[i](vals) <= 0.0:
                out[sl] = [fn(vals) for fn in self._jump_fns[i]]
        return out

    def jump_set_structurally_empty(self, sub: Optional[int] = None) -> bool:
        """True when the jump-set guard is a positive constant (no jumps ever)."""
        guards = [self.subsystems[sub].d_guard] if sub is not None \
            else [s.d_guard for s in self.subsystems]
        return all(isinstance(g, ex.Const) and g.value > 0.0 for g in guards)


def compose_network(specs: Sequence[SubsystemSpec], input_dim: int,
                    equality_samples: int = 256, sample_radius: float = 2.0) -> NetworkSpec:
    """Stack subsystems into one network and record whether jump sets agree.

    The composed flow set is the intersection of the subsystem flow sets and
    the composed jump set is their union.  Stability analyses downstream
    require identical jump sets, so a mismatch is recorded as a warning here
    rather than an error.
    """
    specs = list(specs)
    if not specs:
        raise HybridError("a network needs at least one subsystem")
    state_dim = sum(s.dim for s in specs)
    state_vars = tuple(f"x_{i + 1}" for i in range(state_dim))
    input_vars = tuple(f"u_{m + 1}" for m in range(input_dim))
    var_order = state_vars + input_vars
    allowed = set(var_order)

    slices = []
    offset = 0
    for s in specs:
        s.validate()
        slices.append(slice(offset, offset + s.dim))
        offset += s.dim

    net = NetworkSpec(subsystems=specs, input_dim=input_dim, state_dim=state_dim,
                      slices=slices, var_order=var_order)
    for s in specs:
        for e in list(s.flow) + list(s.jump) + [s.c_guard, s.d_guard]:
            extra = ex.free_vars(e) - allowed
            if extra:
                raise HybridError(
                    f"subsystem '{s.name}': unresolvable variable {sorted(extra)[0]!r}")
        net._flow_fns.extend(ex.compile_expr(e, var_order) for e in s.flow)
        net._jump_fns.append([ex.compile_expr(e, var_order) for e in s.jump])
        net._c_fns.append(ex.compile_expr(s.c_guard, var_order))
        net._d_fns.append(ex.compile_expr(s.d_guard, var_order))

    net.jump_sets_equal = _jump_sets_equal(net, specs, equality_samples, sample_radius)
    if not net.jump_sets_equal:
        net.warnings.append(
            "jump sets differ between subsystems; the Lyapunov and trajectory "
            "stability analyses assume one shared jump set")
    return net


def _jump_sets_equal(net: NetworkSpec, specs, samples: int, radius: float) -> bool:
    first = specs[0].d_guard
    if all(s.d_guard == first for s in specs[1:]):
        return True
    rng = np.random.default_rng(20240801)
    for _ in range(samples):
        x = rng.uniform(-radius, radius, net.state_dim)
        u = rng.uniform(-radius, radius, net.input_dim)
        vals = net._vals(x, u)
        memberships = {fn(vals) <= 0.0 for fn in net._d_fns}
        if len(memberships) > 1:
            return False
    return True


# ---------------------------------------------------------------------------
# simulation


@dataclass
class SimOptions:
    step: float = 1e-3
    priority: str = "jump"  # resolution inside the overlap of flow and jump sets
    time_tol: float = 1e-9
    record_every: int = 1

    def validate(self):
        if self.step <= 0.0:
            raise SimulationError("integration step must be positive")
        if self.priority not in ("jump", "flow"):
            raise SimulationError("priority must be 'jump' or 'flow'")


@dataclass
class SolutionPair:
    x: HybridSignal
    u: HybridSignal
    termination: str  # horizon | max_jumps | left_domain | numerical_failure
    complete: bool
    jumps_applied: int

    @property
    def domain(self) -> HybridTimeDomain:
        return self.x.domain


class _Recorder:
    def __init__(self):
        self.interval_times: List[List[float]] = []
        self.interval_x: List[list] = []
        self.interval_u: List[list] = []
        self.bounds: List[Tuple[float, float, int]] = []

    def open_interval(self, t: float, k: int):
        self.interval_times.append([])
        self.interval_x.append([])
        self.interval_u.append([])
        self.bounds.append((t, t, k))

    def record(self, t: float, x: list, u: list):
        ts = self.interval_times[-1]
        if ts and t <= ts[-1]:
            if t - ts[-1] > -1e-15:
                return  # duplicate point at the same time inside an interval
            raise SimulationError("non-monotone time inside an interval")
        ts.append(t)
        self.interval_x[-1].append(list(x))
        self.interval_u[-1].append(list(u))
        lo, _hi, k = self.bounds[-1]
        self.bounds[-1] = (lo, t, k)

    def finalize(self, termination: str, complete: bool, jumps: int) -> SolutionPair:
        domain = HybridTimeDomain(tuple(self.bounds))
        times = [np.array(ts) for ts in self.interval_times]
        xsig = HybridSignal(domain, times, [np.array(v) for v in self.interval_x])
        usig = HybridSignal(domain, [t.copy() for t in times],
                            [np.array(v) for v in self.interval_u])
        return SolutionPair(x=xsig, u=usig, termination=termination,
                            complete=complete, jumps_applied=jumps)


def simulate(net: NetworkSpec, x0: Sequence[float], u: InputSignal,
             horizon: float, max_jumps: int,
             opts: Optional[SimOptions] = None) -> SolutionPair:
    """Simulate the composed network from ``x0`` under input ``u``.

    Alternates jump and flow phases.  Flow integrates the stacked flow map
    with fixed-step RK4; a step that leaves the flow set or (under jump
    priority) enters the jump set is bisected down to the configured time
    tolerance and the boundary point is recorded.  Completeness records that
    the run used its full time or jump budget.
    """
    opts = opts or SimOptions()
    opts.validate()
    if horizon <= 0.0 and max_jumps <= 0:
        raise SimulationError("need a positive horizon or a positive jump budget")
    x = [float(v) for v in x0]
    if len(x) != net.state_dim:
        raise SimulationError(f"initial state must have dimension {net.state_dim}")
    if u.dim != net.input_dim:
        raise SimulationError(f"input signal must have dimension {net.input_dim}")

    t, k, jumps = 0.0, 0, 0
    u_now = u.values(t, k)
    vals = x + u_now
    if not (net.c_raw(vals) <= 0.0 or net.d_raw(vals) <= 0.0):
        raise SimulationError("initial point lies outside the union of flow and jump sets")

    rec = _Recorder()
    rec.open_interval(t, k)
    rec.record(t, x, u_now)
    jump_priority = opts.priority == "jump"
    h = opts.step
    steps_since_record = 0

    while True:
        u_now = u.values(t, k)
        if not all(map(math.isfinite, x)):
            return rec.finalize("numerical_failure", False, jumps)
        vals = x + u_now
        try:
            in_c = net.c_raw(vals) <= 0.0
            in_d = net.d_raw(vals) <= 0.0
        except (ZeroDivisionError, ValueError, OverflowError):
            return rec.finalize("numerical_failure", False, jumps)
        if not in_c and not in_d:
            return rec.finalize("left_domain", False, jumps)
        do_jump = in_d and (jump_priority or not in_c)
        if do_jump:
            if jumps >= max_jumps:
                return rec.finalize("max_jumps", True, jumps)
            x = net.jump_raw(vals)
            k += 1
            jumps += 1
            rec.open_interval(t, k)
            rec.record(t, x, u.values(t, k))
            steps_since_record = 0
            continue

        # flow phase
        if t >= horizon - 1e-15:
            return rec.finalize("horizon", True, jumps)
        h_step = min(h, horizon - t)
        try:
            x_prop = _rk4(net, x, u, t, k, h_step)
        except (ZeroDivisionError, ValueError, OverflowError):
            return rec.finalize("numerical_failure", False, jumps)
        if not all(map(math.isfinite, x_prop)):
            return rec.finalize("numerical_failure", False, jumps)
        if _flow_event(net, x_prop, u.values(t + h_step, k), jump_priority):
            theta = _bisect_event(net, x, u, t, k, h_step, jump_priority, opts.time_tol)
            x = _rk4(net, x, u, t, k, theta * h_step)
            t = t + theta * h_step
            rec.record(t, x, u.values(t, k))
            steps_since_record = 0
            continue
        x = x_prop
        t = t + h_step
        steps_since_record += 1
        if steps_since_record >= opts.record_every or t >= horizon - 1e-15:
            rec.record(t, x, u.values(t, k))
            steps_since_record = 0


def _flow_event(net: NetworkSpec, x: list, u_val: list, jump_priority: bool) -> bool:
    vals = x + u_val
    if net.c_raw(vals) > 0.0:
        return True
    return jump_priority and net.d_raw(vals) <= 0.0


def _bisect_event(net, x, u, t, k, h_step, jump_priority, time_tol) -> float:
    lo, hi = 0.0, 1.0
    while (hi - lo) * h_step > time_tol:
        mid = 0.5 * (lo + hi)
        x_mid = _rk4(net, x, u, t, k, mid * h_step)
        if _flow_event(net, x_mid, u.values(t + mid * h_step, k), jump_priority):
            hi = mid
        else:
            lo = mid
    return hi


def _rk4(net: NetworkSpec, x: list, u: InputSignal, t: float, k: int, h: float) -> list:
    if h == 0.0:
        return list(x)
    fns = net._flow_fns
    u1 = u.values(t, k)
    u2 = u.values(t + 0.5 * h, k)
    u3 = u.values(t + h, k)
    half = 0.5 * h
    k1 = [f(x + u1) for f in fns]
    s2 = [xi + half * ki for xi, ki in zip(x, k1)]
    k2 = [f(s2 + u2) for f in fns]
    s3 = [xi + half * ki for xi, ki in zip(x, k2)]
    k3 = [f(s3 + u2) for f in fns]
    s4 = [xi + h * ki for xi, ki in zip(x, k3)]
    k4 = [f(s4 + u3) for f in fns]
    w = h / 6.0
    return [xi + w * (a + 2.0 * b + 2.0 * c + d)
            for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]


# ---------------------------------------------------------------------------
# trajectory export


def write_trajectory_csv(sol: SolutionPair, stream: IO[str]) -> int:
    """Write t, k, state, input, and phase columns; returns the row count."""
    writer = csv.writer(stream)
    n, m = sol.x.dim, sol.u.dim
    writer.writerow(["t", "k"] + [f"x_{i + 1}" for i in range(n)]
                    + [f"u_{j + 1}" for j in range(m)] + ["phase"])
    rows = 0
    x_samples = list(sol.x.iter_samples())
    u_samples = list(sol.u.iter_samples())
    first_of_interval = set()
    seen = set()
    for t, k, _v, _j in x_samples:
        if k not in seen:
            first_of_interval.add((t, k))
            seen.add(k)
    for (t, k, xv, jump_point), (_t2, _k2, uv, _) in zip(x_samples, u_samples):
        post_jump = k > 0 and (t, k) in first_of_interval
        phase = "jump" if (jump_point or post_jump) else "flow"
        writer.writerow([repr(t), k] + [repr(float(v)) for v in xv]
                        + [repr(float(v)) for v in uv] + [phase])
        rows += 1
    return rows
