"""Assignment of agents to cost-minimizing communities.

Given a nominal state (sizes, characteristics, provider parameters), every
sample point is labeled with its cheapest community. The realized sizes and
characteristics of that labeling are the quantities whose fixed points are
equilibria. This module also extracts inter-community borders as annotated
polylines (the stability integrals run over them) and indifference loci for
plotting.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .contour import chain_segments, marching_squares
from .costs import BlockLayout, CostModel, grad_x_cost
from .errors import (ConfigError, DegenerateGradientError, EmptyBorderError,
                     EmptyCommunityMeanError)
from .measure import SampledMeasure

_EMPTY = np.zeros(0)


@dataclass(frozen=True)
class NominalState:
    """A point (m, v, z) in the restricted size simplex, the characteristics
    cube and the provider parameter boxes."""

    m: np.ndarray
    v: np.ndarray = field(default_factory=lambda: _EMPTY)
    z: np.ndarray = field(default_factory=lambda: _EMPTY)
    epsilon: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        if self.epsilon <= 0:
            raise ConfigError("epsilon floor must be positive")
        if abs(float(np.sum(self.m)) - 1.0) > 1e-12:
            raise ConfigError("community sizes must sum to 1 within 1e-12")
        if np.any(self.m < 0):
            raise ConfigError("community sizes must be nonnegative")
        for name, vec in (("v", self.v), ("z", self.z)):
            if vec.size and (np.any(vec < -1e-12) or np.any(vec > 1 + 1e-12)):
                raise ConfigError(f"{name} must lie in the unit cube")

    def with_m(self, m) -> "NominalState":
        return NominalState(m=np.asarray(m, dtype=float), v=self.v, z=self.z,
                            epsilon=self.epsilon)

    def with_m_component(self, i: int, value: float) -> "NominalState":
        m = self.m.copy()
        m[i] = value
        # bypass the simplex check: single-component probes are derivative steps
        out = object.__new__(NominalState)
        object.__setattr__(out, "m", m)
        object.__setattr__(out, "v", self.v)
        object.__setattr__(out, "z", self.z)
        object.__setattr__(out, "epsilon", self.epsilon)
        return out

    def with_v(self, v) -> "NominalState":
        return NominalState(m=self.m, v=np.asarray(v, dtype=float), z=self.z,
                            epsilon=self.epsilon)

    def with_z(self, z) -> "NominalState":
        return NominalState(m=self.m, v=self.v, z=np.asarray(z, dtype=float),
                            epsilon=self.epsilon)


# ---------------------------------------------------------------------------
# Community characteristics.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CharacteristicItem:
    """One endogenous community characteristic.

    kinds:
      mean_coordinate  weighted mean of one coordinate over members
      centroid         one mean per coordinate (a block of k values)
      mass             the community's realized mass
      type_share       realized mass of one agent type inside the community
      smoothed_median  kernel-smoothed median of one coordinate
      custom           fn(points, weights) -> float over the member cloud

    ``calibration`` is an affine (scale, offset) applied before clamping the
    value into [0, 1].
    """

    kind: str
    axis: int = 0
    type_index: int = 1
    bandwidth: float = 0.05
    fn: Optional[Callable] = None
    calibration: tuple = (1.0, 0.0)

    def width(self, dimension: int) -> int:
        return dimension if self.kind == "centroid" else 1


@dataclass(frozen=True)
class CharacteristicsSpec:
    """Per-community characteristic lists plus mandatory per-type shares.

    With q agent types, each community automatically carries the realized
    mass of every type other than the first (their shares determine the
    first type's by subtraction from the community total).
    """

    items: tuple  # tuple over communities of tuples of CharacteristicItem
    dimension: int
    q: int = 1
    mean_guard: float = 0.5  # multiples of state.epsilon below which means fail

    def layout(self) -> BlockLayout:
        sizes = []
        for per_community in self.items:
            width = sum(it.width(self.dimension) for it in per_community)
            width += max(0, self.q - 1)
            sizes.append(width)
        return BlockLayout(sizes=tuple(sizes))


def _smoothed_quantile(values, weights, level, bandwidth):
    lo = float(np.min(values)) - 5 * bandwidth
    hi = float(np.max(values)) + 5 * bandwidth
    total = float(np.sum(weights))

    def cdf(t):
        s = 1.0 / (1.0 + np.exp(-(t - values) / bandwidth))
        return float(np.sum(weights * s)) / total

    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _item_value(item, points, weights, mass, guard):
    if item.kind == "mass":
        return mass
    if item.kind in ("mean_coordinate", "centroid", "smoothed_median") and mass <= guard:
        raise EmptyCommunityMeanError(
            "mean-type characteristic requested for a near-empty community",
            realized_mass=mass)
    if item.kind == "mean_coordinate":
        return float(np.sum(weights * points[:, item.axis]) / mass)
    if item.kind == "smoothed_median":
        return _smoothed_quantile(points[:, item.axis], weights, 0.5, item.bandwidth)
    if item.kind == "custom":
        return float(item.fn(points, weights))
    raise ConfigError(f"unknown characteristic kind {item.kind!r}")


def _calibrate(value, calibration):
    scale, offset = calibration
    return float(np.clip(scale * value + offset, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Partitions.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Labels plus the realized aggregates of one assignment pass."""

    labels: tuple  # per type: (S_j,) community indices, 0-based
    realized_sizes: np.ndarray
    realized_characteristics: np.ndarray
    type_masses: np.ndarray  # (n, q)
    tie_count: int
    assigned_costs: tuple  # per type: cost actually paid by each sample
    best_other_costs: tuple  # per type: cheapest alternative community cost


def assign(model: CostModel, mu: SampledMeasure, state: NominalState,
           charspec: Optional[CharacteristicsSpec] = None) -> Partition:
    """Label every sample point with its minimal-cost community.

    Exact cost ties break toward the lowest community index and are counted;
    under strict preferences the tied set carries zero mass, so any
    deterministic rule yields the same partition.
    """
    labels = []
    assigned = []
    best_other = []
    ties = 0
    n = model.n
    sizes = np.zeros(n)
    type_masses = np.zeros((n, mu.q))
    for col, s in enumerate(mu.samples):
        c = model.cost_matrix(s.points, state, s.space.index)
        lab = np.argmin(c, axis=1)  # argmin takes the first minimum: lowest index
        cmin = c[np.arange(len(c)), lab]
        ties += int(np.count_nonzero(np.sum(c == cmin[:, None], axis=1) > 1))
        if n > 1:
            masked = c.copy()
            masked[np.arange(len(c)), lab] = np.inf
            second = np.min(masked, axis=1)
        else:
            second = np.full(len(c), np.inf)
        labels.append(lab)
        assigned.append(cmin)
        best_other.append(second)
        for i in range(n):
            mass = float(np.sum(s.weights[lab == i]))
            sizes[i] += mass
            type_masses[i, col] = mass
    chars = _realized_characteristics(mu, labels, sizes, type_masses, charspec, state) \
        if charspec is not None else _EMPTY
    return Partition(labels=tuple(labels), realized_sizes=sizes,
                     realized_characteristics=chars, type_masses=type_masses,
                     tie_count=ties, assigned_costs=tuple(assigned),
                     best_other_costs=tuple(best_other))


def _realized_characteristics(mu, labels, sizes, type_masses, charspec, state):
    guard = charspec.mean_guard * state.epsilon
    values = []
    for i, per_community in enumerate(charspec.items):
        for item in per_community:
            if item.kind == "type_share":
                values.append(_calibrate(type_masses[i, item.type_index - 1],
                                         item.calibration))
                continue
            pts = np.concatenate([s.points[labels[t] == i]
                                  for t, s in enumerate(mu.samples)])
            wts = np.concatenate([s.weights[labels[t] == i]
                                  for t, s in enumerate(mu.samples)])
            if item.kind == "centroid":
                for axis in range(charspec.dimension):
                    sub = replace(item, kind="mean_coordinate", axis=axis)
                    values.append(_calibrate(
                        _item_value(sub, pts, wts, sizes[i], guard), item.calibration))
                continue
            values.append(_calibrate(_item_value(item, pts, wts, sizes[i], guard),
                                     item.calibration))
        for t in range(1, mu.q):
            values.append(_calibrate(type_masses[i, t], (1.0, 0.0)))
    return np.asarray(values, dtype=float)


def realized_characteristics(mu: SampledMeasure, partition: Partition,
                             charspec: CharacteristicsSpec, state: NominalState) -> np.ndarray:
    """Quadrature of the characteristic integrands against the member clouds."""
    return _realized_characteristics(mu, partition.labels, partition.realized_sizes,
                                     partition.type_masses, charspec, state)


def size_map(model: CostModel, mu: SampledMeasure, state: NominalState) -> np.ndarray:
    """Realized community sizes at the given nominal state.

    This is the map whose fixed points are the non-empty-community equilibria.
    """
    return assign(model, mu, state).realized_sizes


def joint_map(model: CostModel, mu: SampledMeasure, state: NominalState,
              charspec: CharacteristicsSpec):
    """Realized (sizes, characteristics) in one assignment pass."""
    part = assign(model, mu, state, charspec)
    return part.realized_sizes, part.realized_characteristics


# ---------------------------------------------------------------------------
# Borders.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BorderPolyline:
    """Annotated approximation of the locus where two communities tie for
    cheapest: vertices, local density, gradient gap and arc-length weights."""

    i: int
    j: int
    vertices: np.ndarray  # (V, k)
    density: np.ndarray
    grad_gap: np.ndarray
    arc_weight: np.ndarray
    chains: tuple  # slices into the vertex arrays, one per connected chain
    dimension: int

    @property
    def length(self) -> float:
        return float(np.sum(self.arc_weight)) if self.dimension == 2 else 0.0

    def line_integral(self, vertex_values: np.ndarray) -> float:
        return float(np.sum(vertex_values * self.arc_weight))


def _gap_at(model, state, i, j, x, type_index=1):
    gi = grad_x_cost(model, type_index, i, x, state)
    gj = grad_x_cost(model, type_index, j, x, state)
    return float(np.linalg.norm(gj - gi))


def extract_border(model: CostModel, mu: SampledMeasure, state: NominalState,
                   i: int, j: int, grid_resolution: int = 256,
                   gap_tolerance: float = 1e-8) -> BorderPolyline:
    """Contour of c_j - c_i = 0 restricted to where i or j is the argmin.

    Runs on its own evaluation grid over the support box (finer than the
    agent sample; the stability integrals want smooth contours). Supports
    one- and two-dimensional type spaces. Each vertex is annotated with the
    normalized density, the gradient gap normal to the border, and an
    arc-length weight (half the adjacent segment lengths; the single-point
    border of a 1-d space carries weight one by convention).
    """
    sample = mu.single()
    space = sample.space
    k = space.dimension
    if k > 2:
        raise ConfigError("border extraction supports dimensions 1 and 2 only")
    if i == j:
        raise ConfigError("border needs two distinct communities")

    if k == 1:
        return _extract_border_1d(model, sample, state, i, j, grid_resolution,
                                  gap_tolerance)

    G = grid_resolution
    xs = np.linspace(space.lo[0], space.hi[0], G + 1)
    ys = np.linspace(space.lo[1], space.hi[1], G + 1)
    mesh = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    costs = model.cost_matrix(mesh, state, space.index)
    lab = np.argmin(costs, axis=1).reshape(G + 1, G + 1)
    phi = (costs[:, j] - costs[:, i]).reshape(G + 1, G + 1)
    node_in_pair = (lab == i) | (lab == j)
    cell_mask = (node_in_pair[:-1, :-1] & node_in_pair[1:, :-1]
                 & node_in_pair[1:, 1:] & node_in_pair[:-1, 1:])
    if space.predicate is not None:
        node_support = space.contains(mesh).reshape(G + 1, G + 1)
        cell_mask &= (node_support[:-1, :-1] & node_support[1:, :-1]
                      & node_support[1:, 1:] & node_support[:-1, 1:])
    segments = marching_squares(phi, xs, ys, cell_mask)
    chains = chain_segments(segments)
    chains = [c for c in chains if len(c) >= 2]
    if not chains:
        raise EmptyBorderError("communities share no border at this state",
                               pair=(i + 1, j + 1))
    vertices = np.concatenate(chains, axis=0)
    slices = []
    offset = 0
    weights = []
    for c in chains:
        seg_len = np.linalg.norm(np.diff(c, axis=0), axis=1)
        w = np.zeros(len(c))
        w[:-1] += seg_len / 2
        w[1:] += seg_len / 2
        weights.append(w)
        slices.append(slice(offset, offset + len(c)))
        offset += len(c)
    arc_weight = np.concatenate(weights)
    density = sample.normalized_density(vertices)
    gap = np.array([_gap_at(model, state, i, j, x, space.index) for x in vertices])
    if np.any(gap < gap_tolerance):
        worst = vertices[int(np.argmin(gap))]
        raise DegenerateGradientError(
            "gradient gap below tolerance on the border",
            pair=(i + 1, j + 1), vertex=[float(c) for c in worst],
            gap=float(np.min(gap)))
    return BorderPolyline(i=i, j=j, vertices=vertices, density=density,
                          grad_gap=gap, arc_weight=arc_weight,
                          chains=tuple(slices), dimension=2)


def _extract_border_1d(model, sample, state, i, j, grid_resolution, gap_tolerance):
    space = sample.space
    xs = np.linspace(space.lo[0], space.hi[0], max(grid_resolution, 64) + 1)
    pts = xs[:, None]
    costs = model.cost_matrix(pts, state, space.index)
    lab = np.argmin(costs, axis=1)
    phi = costs[:, j] - costs[:, i]
    pair_ok = (lab == i) | (lab == j)
    roots = []
    for a in range(len(xs) - 1):
        if not (pair_ok[a] and pair_ok[a + 1]):
            continue
        if (phi[a] >= 0) == (phi[a + 1] >= 0):
            continue
        lo, hi = xs[a], xs[a + 1]
        flo = phi[a]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            row = model.cost_matrix(np.array([[mid]]), state, space.index)[0]
            fm = float(row[j] - row[i])
            if (fm >= 0) == (flo >= 0):
                lo, flo = mid, fm
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    if not roots:
        raise EmptyBorderError("communities share no border at this state",
                               pair=(i + 1, j + 1))
    vertices = np.asarray(roots)[:, None]
    density = sample.normalized_density(vertices)
    gap = np.array([_gap_at(model, state, i, j, x, space.index) for x in vertices])
    if np.any(gap < gap_tolerance):
        raise DegenerateGradientError("gradient gap below tolerance on the border",
                                      pair=(i + 1, j + 1), gap=float(np.min(gap)))
    # 0-dimensional border: each indifference point carries unit arc weight
    arc_weight = np.ones(len(vertices))
    return BorderPolyline(i=i, j=j, vertices=vertices, density=density,
                          grad_gap=gap, arc_weight=arc_weight,
                          chains=tuple(slice(t, t + 1) for t in range(len(vertices))),
                          dimension=1)


def indifference_locus(center_a, center_b, delta_p: float, lo, hi,
                       grid_resolution: int = 256):
    """Level set ||x - a|| - ||x - b|| = delta_p on a rectangle.

    A hyperbola branch while |delta_p| is below the center distance, the
    perpendicular bisector at zero, a degenerate ray at equality, and empty
    beyond it. Returns a list of (V, 2) polylines (possibly empty).
    """
    a = np.asarray(center_a, dtype=float)
    b = np.asarray(center_b, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    xs = np.linspace(lo[0], hi[0], grid_resolution + 1)
    ys = np.linspace(lo[1], hi[1], grid_resolution + 1)
    mesh = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    phi = (np.linalg.norm(mesh - a, axis=1) - np.linalg.norm(mesh - b, axis=1)
           - delta_p).reshape(len(xs), len(ys))
    segments = marching_squares(phi, xs, ys)
    return [c for c in chain_segments(segments) if len(c) >= 2]
