"""Stratified samplers over flow and jump sets.

Violations of Lyapunov-type inequalities concentrate where guards vanish and
where the active index of a max-type function changes, so the sampler mixes
uniform draws with guard-boundary points (found by bisecting between an
inside and an outside point) and tie points (coordinate blocks copied across
subsystems up to sign).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .hybrid import NetworkSpec


class SamplerEmptyError(Exception):
    """The target set received no samples; verification is inconclusive."""


@dataclass
class SamplerSpec:
    n_samples: int = 10000
    box_radius: float = 1.0
    u_box: Optional[List[Tuple[float, float]]] = None  # None means all zeros
    boundary_fraction: float = 0.2
    tie_fraction: float = 0.2
    seed: int = 0
    max_attempts_factor: int = 200

    def u_low_high(self, input_dim: int) -> Tuple[np.ndarray, np.ndarray]:
        if self.u_box is None:
            zeros = np.zeros(input_dim)
            return zeros, zeros
        if len(self.u_box) != input_dim:
            raise ValueError(f"u_box must list {input_dim} component ranges")
        lo = np.array([b[0] for b in self.u_box], dtype=float)
        hi = np.array([b[1] for b in self.u_box], dtype=float)
        return lo, hi


def sample_set(net: NetworkSpec, guard: Callable[[np.ndarray, np.ndarray], float],
               spec: SamplerSpec) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Sample points with ``guard(x, u) <= 0`` using the stratified mix."""
    rng = np.random.default_rng(spec.seed)
    u_lo, u_hi = spec.u_low_high(net.input_dim)
    R = spec.box_radius

    def draw():
        x = rng.uniform(-R, R, net.state_dim)
        u = u_lo + rng.uniform(0.0, 1.0, net.input_dim) * (u_hi - u_lo)
        return x, u

    n_boundary = int(spec.n_samples * spec.boundary_fraction)
    n_tie = int(spec.n_samples * spec.tie_fraction)
    n_uniform = spec.n_samples - n_boundary - n_tie

    inside: List[Tuple[np.ndarray, np.ndarray]] = []
    outside: List[Tuple[np.ndarray, np.ndarray]] = []
    attempts = 0
    limit = spec.max_attempts_factor * max(spec.n_samples, 1)
    while len(inside) < n_uniform and attempts < limit:
        x, u = draw()
        attempts += 1
        if guard(x, u) <= 0.0:
            inside.append((x, u))
        elif len(outside) < n_boundary + 16:
            outside.append((x, u))
    if not inside:
        raise SamplerEmptyError("no samples landed in the target set")

    samples = list(inside)

    # guard-boundary points: bisect segments between inside and outside draws
    bi = 0
    while len(samples) < n_uniform + n_boundary and bi < 4 * n_boundary:
        bi += 1
        xin, uin = inside[rng.integers(len(inside))]
        if outside:
            xout, uout = outside[rng.integers(len(outside))]
        else:
            xout, uout = draw()
            if guard(xout, uout) <= 0.0:
                continue
        lo_pt, hi_pt = (xin, uin), (xout, uout)
        for _ in range(40):
            xm = 0.5 * (lo_pt[0] + hi_pt[0])
            um = 0.5 * (lo_pt[1] + hi_pt[1])
            if guard(xm, um) <= 0.0:
                lo_pt = (xm, um)
            else:
                hi_pt = (xm, um)
        samples.append(lo_pt)

    # tie points: copy one subsystem block onto another up to sign
    ti = 0
    while len(samples) < spec.n_samples and ti < 8 * n_tie:
        ti += 1
        x, u = inside[rng.integers(len(inside))]
        x = x.copy()
        i, j = rng.integers(net.n), rng.integers(net.n)
        if i == j or net.subsystems[i].dim != net.subsystems[j].dim:
            continue
        sign = -1.0 if rng.random() < 0.5 else 1.0
        x[net.slices[j]] = sign * x[net.slices[i]]
        if guard(x, u) <= 0.0:
            samples.append((x, u))
    # top up with plain inside draws if strata fell short
    while len(samples) < spec.n_samples and attempts < limit:
        x, u = draw()
        attempts += 1
        if guard(x, u) <= 0.0:
            samples.append((x, u))
    return samples


def flow_set_samples(net: NetworkSpec, spec: SamplerSpec, sub: Optional[int] = None):
    return sample_set(net, lambda x, u: net.c_value(x, u, sub=sub), spec)


def jump_set_samples(net: NetworkSpec, spec: SamplerSpec, sub: Optional[int] = None):
    return sample_set(net, lambda x, u: net.d_value(x, u, sub=sub), spec)


def sphere_directions(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Directions with unit max norm, axes included."""
    dirs = [np.eye(dim)[i] * s for i in range(dim) for s in (1.0, -1.0)]
    extra = rng.uniform(-1.0, 1.0, (max(count - len(dirs), 0), dim))
    norms = np.max(np.abs(extra), axis=1)
    keep = norms > 1e-12
    dirs.extend(extra[keep] / norms[keep, None])
    return np.array(dirs[:max(count, 1)])
