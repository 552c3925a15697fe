"""Gain matrices, the max-type gain operator, small-gain checks, scaling paths.

The small-gain condition is decided two independent ways and cross-checked:
by enumerating simple cycles of the gain digraph and testing each composed
cycle gain below the identity on a log grid, and by searching directly for a
nonnegative vector that the gain operator fails to strictly decrease.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import networkx as nx
import numpy as np

from . import expr as ex
from .kfun import (Classification, KFun, KFunError, at_least, classify_callable,
                   default_grid, invert, kfun_to_json, pointwise_min)


class GainMatrixError(Exception):
    pass


class SmallGainError(Exception):
    pass


class OmegaPathError(Exception):
    pass


@dataclass(frozen=True)
class GainMatrix:
    """Square matrix of gains with a zero diagonal; nonzero entries class-Kinf."""

    entries: tuple  # tuple of tuples of KFun

    def __post_init__(self):
        n = len(self.entries)
        for i, row in enumerate(self.entries):
            if len(row) != n:
                raise GainMatrixError("gain matrix must be square")
            for j, g in enumerate(row):
                if i == j and not g.is_zero:
                    raise GainMatrixError(f"diagonal entry ({i + 1},{i + 1}) must be zero")
                if i != j and not g.is_zero and not at_least(g.classification, Classification.CLASS_K_INF):
                    raise GainMatrixError(
                        f"entry ({i + 1},{j + 1}) classified {g.classification.value}, "
                        "nonzero gains must be class-Kinf")

    @property
    def n(self) -> int:
        return len(self.entries)

    @staticmethod
    def from_rows(rows: Sequence[Sequence[Optional[KFun]]]) -> "GainMatrix":
        fixed = tuple(tuple(KFun.zero() if g is None else g for g in row) for row in rows)
        return GainMatrix(fixed)

    def linear_slopes(self) -> Optional[np.ndarray]:
        """Coefficient matrix when every entry is (sampled) linear, else None."""
        out = np.zeros((self.n, self.n))
        for i, row in enumerate(self.entries):
            for j, g in enumerate(row):
                if g.is_zero:
                    continue
                if g.linear_slope is None:
                    return None
                out[i, j] = g.linear_slope
        return out

    def scaled(self, factor: float) -> "GainMatrix":
        if factor == 1.0:
            return self
        rows = []
        for row in self.entries:
            new_row = []
            for g in row:
                if g.is_zero:
                    new_row.append(g)
                else:
                    scale = KFun.from_expr(ex.Mul(ex.Const(factor), ex.Var("s")))
                    new_row.append(scale.compose(g))
            rows.append(tuple(new_row))
        return GainMatrix(tuple(rows))

    def to_json(self) -> dict:
        return {"n": self.n,
                "entries": [[None if g.is_zero else kfun_to_json(g) for g in row]
                            for row in self.entries]}


def gamma_max_apply(gm: GainMatrix, s: Sequence[float]) -> np.ndarray:
    """Componentwise max of row gains applied to the vector; zero rows give 0."""
    s = np.asarray(s, dtype=float)
    if s.shape != (gm.n,):
        raise GainMatrixError(f"expected a vector of length {gm.n}, got shape {s.shape}")
    if np.any(s < 0.0):
        raise GainMatrixError("gain operator arguments must be nonnegative")
    out = np.zeros(gm.n)
    for i, row in enumerate(gm.entries):
        best = 0.0
        for j, g in enumerate(row):
            if g.is_zero:
                continue
            v = g(float(s[j]))
            if v > best:
                best = v
        out[i] = best
    return out


def iterate_gamma(gm: GainMatrix, s: Sequence[float], p: int) -> np.ndarray:
    if p < 0:
        raise GainMatrixError("iteration count must be nonnegative")
    v = np.asarray(s, dtype=float).copy()
    for _ in range(p):
        v = gamma_max_apply(gm, v)
    return v


@dataclass
class SmallGainOptions:
    grid_lo: float = 1e-8
    grid_hi: float = 1e8
    grid_points: int = 128
    radii_points: int = 9
    random_directions: int = 1000
    seed: int = 0
    cycle_size_limit: int = 12
    strictness: float = 1e-9

    def grid(self) -> np.ndarray:
        if self.grid_points < 16:
            raise SmallGainError("grid too coarse: need at least 16 points")
        return np.geomspace(self.grid_lo, self.grid_hi, self.grid_points)


@dataclass
class CycleWitness:
    indices: List[int]  # 0-based subsystem indices along the cycle
    radius: float
    value: float  # composed gain at the radius; a violation has value >= radius

    def to_json(self) -> dict:
        return {"cycle": [i + 1 for i in self.indices],
                "radius": self.radius, "composed_gain": self.value}


@dataclass
class SmallGainVerdict:
    holds: bool
    inconclusive: bool = False
    witness_vector: Optional[np.ndarray] = None
    witness_image: Optional[np.ndarray] = None
    witness_cycle: Optional[CycleWitness] = None
    margin: float = 0.0  # max of composed cycle gain / radius over the grid
    cycles_checked: bool = True
    methods_disagreed: bool = False
    notes: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {"holds": self.holds, "inconclusive": self.inconclusive,
               "margin": self.margin, "cycles_checked": self.cycles_checked}
        if self.witness_vector is not None:
            out["witness_vector"] = [float(v) for v in self.witness_vector]
            out["witness_image"] = [float(v) for v in self.witness_image]
        if self.witness_cycle is not None:
            out["witness_cycle"] = self.witness_cycle.to_json()
        if self.notes:
            out["notes"] = list(self.notes)
        return out


def gain_digraph(gm: GainMatrix) -> nx.DiGraph:
    """Directed graph with an edge j -> i whenever the (i, j) gain is nonzero."""
    g = nx.DiGraph()
    g.add_nodes_from(range(gm.n))
    for i, row in enumerate(gm.entries):
        for j, entry in enumerate(row):
            if not entry.is_zero:
                g.add_edge(j, i)
    return g


def simple_gain_cycles(gm: GainMatrix) -> List[List[int]]:
    return [list(c) for c in nx.simple_cycles(gain_digraph(gm))]


def compose_cycle(gm: GainMatrix, cycle: Sequence[int], r: float) -> float:
    """Gain composed once around the cycle, starting and ending at radius r."""
    v = r
    nodes = list(cycle)
    for a, b in zip(nodes, nodes[1:] + nodes[:1]):
        v = gm.entries[b][a](v)
    return v


def small_gain_check(gm: GainMatrix, options: Optional[SmallGainOptions] = None) -> SmallGainVerdict:
    """Decide the small-gain condition by cycle enumeration plus direct search.

    Strict decrease of a composed cycle gain is accepted only with a relative
    margin; grid points inside the margin band make the verdict inconclusive
    instead of a pass.  Any witness is re-evaluated before being reported.
    """
    opts = options or SmallGainOptions()
    grid = opts.grid()
    verdict = SmallGainVerdict(holds=True, margin=0.0)

    if gm.n <= opts.cycle_size_limit:
        for cycle in simple_gain_cycles(gm):
            for r in grid:
                v = compose_cycle(gm, cycle, float(r))
                ratio = v / r
                if ratio > verdict.margin:
                    verdict.margin = ratio
                if v >= r:
                    witness = CycleWitness(list(cycle), float(r), float(v))
                    if compose_cycle(gm, cycle, witness.radius) >= witness.radius:
                        verdict.holds = False
                        verdict.witness_cycle = witness
                        break
            if verdict.witness_cycle is not None:
                break
        if verdict.witness_cycle is None and verdict.margin > 1.0 - opts.strictness:
            verdict.holds = False
            verdict.inconclusive = True
            verdict.notes.append("cycle gain inside the strictness band; verdict inconclusive")
    else:
        verdict.cycles_checked = False
        verdict.notes.append(
            f"n={gm.n} exceeds the cycle enumeration limit; direct search only")

    s_witness = _direct_search(gm, grid, opts)
    if s_witness is not None:
        image = gamma_max_apply(gm, s_witness)
        if np.all(image >= s_witness) and np.any(s_witness > 0.0):
            if verdict.cycles_checked and verdict.witness_cycle is None and not verdict.inconclusive:
                verdict.methods_disagreed = True
                verdict.notes.append("direct witness found although every cycle passed")
            verdict.holds = False
            verdict.witness_vector = s_witness
            verdict.witness_image = image
    return verdict


def _direct_search(gm: GainMatrix, grid: np.ndarray, opts: SmallGainOptions) -> Optional[np.ndarray]:
    n = gm.n
    rng = np.random.default_rng(opts.seed)
    directions = []
    if n <= 10:
        for mask in itertools.product((0.0, 1.0), repeat=n):
            if any(mask):
                directions.append(np.asarray(mask))
    extra = np.abs(rng.standard_normal((opts.random_directions, n)))
    norms = extra.max(axis=1)
    keep = norms > 0
    directions.extend(extra[keep] / norms[keep, None])
    radii = np.geomspace(1e-6, 1e6, opts.radii_points)
    for d in directions:
        for r in radii:
            s = d * r
            image = gamma_max_apply(gm, s)
            if np.all(image >= s):
                return s
    return None


@dataclass
class OmegaPath:
    """Componentwise scaling path strictly decreased by the gain operator."""

    sigmas: List[KFun]
    sigma_invs: List[KFun]
    anchor: np.ndarray
    gain_matrix: GainMatrix
    grid: np.ndarray
    inflation: float
    margin: float  # max over the grid of (Gamma_max(sigma(r)))_i / sigma_i(r)
    vector_eval: Callable[[float], np.ndarray]

    @property
    def n(self) -> int:
        return len(self.sigmas)

    def to_json(self) -> dict:
        return {"anchor": [float(a) for a in self.anchor],
                "inflation": self.inflation,
                "margin": self.margin,
                "sigma": [kfun_to_json(s) for s in self.sigmas]}


def _path_vector_fn(gm: GainMatrix, anchor: np.ndarray, inflation: float) -> Callable[[float], np.ndarray]:
    slopes = gm.linear_slopes()
    n = gm.n
    if slopes is not None:
        scaled = slopes * (1.0 + inflation)
        coeff = anchor.copy()
        best = anchor.copy()
        for _ in range(n - 1):
            coeff = np.array([max([scaled[i, j] * coeff[j] for j in range(n) if j != i],
                                  default=0.0) for i in range(n)])
            best = np.maximum(best, coeff)

        def linear_fn(r: float, c=best) -> np.ndarray:
            return c * r
        return linear_fn

    factor = 1.0 + inflation

    def general_fn(r: float) -> np.ndarray:
        v = anchor * r
        best = v.copy()
        for _ in range(n - 1):
            v = factor * gamma_max_apply(gm, v)
            best = np.maximum(best, v)
        return best
    return general_fn


def _inflation_candidates(gm: GainMatrix, margin: float, cycles_exist: bool) -> List[float]:
    cands = [0.0]
    if cycles_exist and 0.0 < margin < 1.0:
        top = (1.0 / margin) ** (1.0 / (2.0 * gm.n)) - 1.0
        top = min(max(top, 1e-9), 1.0)
    else:
        top = 0.5
    cands.extend([top, top / 4.0, top / 16.0, top / 64.0, 1e-6])
    seen, out = set(), []
    for c in cands:
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def _inflated_cycles_ok(gm: GainMatrix, inflation: float, grid: np.ndarray, strictness: float) -> bool:
    if inflation == 0.0:
        return True
    factor = 1.0 + inflation
    for cycle in simple_gain_cycles(gm):
        for r in grid:
            v = float(r)
            nodes = list(cycle)
            for a, b in zip(nodes, nodes[1:] + nodes[:1]):
                v = factor * gm.entries[b][a](v)
            if v > (1.0 - strictness) * r:
                return False
    return True


def build_omega_path(gm: GainMatrix, anchor: Optional[Sequence[float]] = None,
                     grid: Optional[np.ndarray] = None,
                     verdict: Optional[SmallGainVerdict] = None,
                     options: Optional[SmallGainOptions] = None) -> OmegaPath:
    """Construct the scaling path from iterated gain-operator images of the anchor.

    The plain construction (no inflation) is tried first.  When a grid point
    fails the strict decrease, the iterates are recomputed with mildly
    inflated gains, which restores strictness whenever the small-gain margin
    allows; the path is always verified against the original operator.
    """
    opts = options or SmallGainOptions()
    if grid is None:
        grid = opts.grid()
    if verdict is None:
        verdict = small_gain_check(gm, opts)
    if not verdict.holds:
        raise SmallGainError("small-gain condition does not hold; no scaling path exists")
    a = np.ones(gm.n) if anchor is None else np.asarray(anchor, dtype=float)
    if a.shape != (gm.n,) or np.any(a <= 0.0):
        raise OmegaPathError("anchor must be a positive vector matching the matrix size")

    cycles_exist = bool(simple_gain_cycles(gm)) if gm.n <= opts.cycle_size_limit else True
    worst_r = None
    for inflation in _inflation_candidates(gm, verdict.margin, cycles_exist):
        if gm.n <= opts.cycle_size_limit and not _inflated_cycles_ok(gm, inflation, grid, opts.strictness):
            continue
        vec_fn = _path_vector_fn(gm, a, inflation)
        ok = True
        margin = 0.0
        for r in grid:
            sig = vec_fn(float(r))
            image = gamma_max_apply(gm, sig)
            ratios = image / sig
            margin = max(margin, float(ratios.max()))
            if np.any(image > (1.0 - opts.strictness) * sig):
                ok = False
                worst_r = float(r)
                break
        if ok:
            sigmas = [_sigma_component(vec_fn, i, gm.n) for i in range(gm.n)]
            sigma_invs = [_sigma_inverse(sigmas[i]) for i in range(gm.n)]
            return OmegaPath(sigmas=sigmas, sigma_invs=sigma_invs, anchor=a,
                             gain_matrix=gm, grid=grid, inflation=inflation,
                             margin=margin, vector_eval=vec_fn)
    raise OmegaPathError(
        f"scaling path not strictly decreased at r={worst_r!r}; "
        "the small-gain verdict may be a false positive")


def _sigma_component(vec_fn: Callable[[float], np.ndarray], i: int, n: int) -> KFun:
    fn = lambda r: float(vec_fn(r)[i])
    f = KFun.from_callable(fn, f"sigma_{i + 1}")
    if not at_least(f.classification, Classification.CLASS_K_INF):
        raise OmegaPathError(f"path component {i + 1} failed class-Kinf checks")
    return f


def _sigma_inverse(sigma: KFun) -> KFun:
    if sigma.linear_slope is not None:
        inv = KFun.linear(1.0 / sigma.linear_slope)
        return inv
    fn = lambda y: invert(sigma, y)
    return KFun.from_callable(fn, f"{sigma.describe()}^-1")


def compose_phi(path: OmegaPath, strict_tol: float = 1e-9) -> KFun:
    """Common lower envelope of the path components, checked against the gains."""
    phi = pointwise_min(path.sigmas)
    gm = path.gain_matrix
    for r in path.grid:
        sig = path.vector_eval(float(r))
        phi_r = phi(float(r))
        for i in range(path.n):
            lhs = phi_r
            for j in range(path.n):
                if j != i and not gm.entries[i][j].is_zero:
                    lhs = max(lhs, gm.entries[i][j](float(sig[j])))
            if lhs > sig[i] * (1.0 + strict_tol):
                raise OmegaPathError(
                    f"envelope bound violated at r={float(r)!r}, component {i + 1}")
    return phi


def operator_radius_power_iteration(gm: GainMatrix, iterations: int = 840,
                                    window: int = 600) -> float:
    """Growth rate of the iterated gain operator from repeated normalized application.

    For max-linear gains this converges to the max cycle geometric mean, the
    quantity whose position relative to 1 decides the small-gain condition.
    The window is a multiple of every possible period of the normalized orbit
    for sizes up to 6, so the averaged growth settles once the orbit does.
    """
    s = np.ones(gm.n)
    logs = []
    for _ in range(iterations):
        t = gamma_max_apply(gm, s)
        lam = float(np.max(t))
        if lam <= 0.0:
            return 0.0
        logs.append(math.log(lam))
        s = t / lam
    tail = logs[-window:]
    return math.exp(sum(tail) / len(tail))
