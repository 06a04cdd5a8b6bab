"""Weighted-sample representation of the agent distribution.

The population is a non-atomic density over one or more type spaces (one per
discrete agent type). Each space is discretized into a cloud of weighted
sample points suitable for quadrature: grid measures use a midpoint rule per
cell, Monte Carlo measures use i.i.d. rejection draws. After construction the
weights of type ``j`` sum exactly to that type's mass share, and shares sum
to one across the population, so the simplex identity used by the solver
holds to machine precision.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import RejectionRateExceededError, SupportEmptyError, ConfigError

Predicate = Callable[[np.ndarray], np.ndarray]


def disk_predicate(center: Sequence[float], radius: float) -> Predicate:
    """Membership test for a closed ball, usable as a support predicate."""
    c = np.asarray(center, dtype=float)

    def inside(points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - c[None, :], axis=1) <= radius

    return inside


class UniformDensity:
    """Constant density on the support."""

    kind = "uniform"

    def values(self, points: np.ndarray) -> np.ndarray:
        return np.ones(len(points))

    def maximum(self) -> float:
        return 1.0


@dataclass(frozen=True)
class PiecewiseConstantDensity:
    """Piecewise-constant density: a background level plus sub-box overrides.

    Later boxes win where boxes overlap. Levels must be nonnegative; the
    overall scale is irrelevant because the measure is normalized to its
    mass share at construction.
    """

    boxes: tuple  # tuple of (lo, hi) coordinate arrays
    levels: tuple  # one level per box
    background: float = 1.0

    def values(self, points: np.ndarray) -> np.ndarray:
        out = np.full(len(points), float(self.background))
        for (lo, hi), level in zip(self.boxes, self.levels):
            lo = np.asarray(lo, dtype=float)
            hi = np.asarray(hi, dtype=float)
            mask = np.all((points >= lo) & (points <= hi), axis=1)
            out[mask] = float(level)
        return out

    def maximum(self) -> float:
        return max(float(self.background), *(float(v) for v in self.levels))


@dataclass(frozen=True)
class TabulatedDensity:
    """Density given by values on the nodes of a rectilinear grid.

    Evaluated by multilinear interpolation; queries outside the node range
    clamp to the boundary.
    """

    axes: tuple  # per-dimension node coordinate arrays, ascending
    table: np.ndarray

    def values(self, points: np.ndarray) -> np.ndarray:
        idx = []
        frac = []
        for d, nodes in enumerate(self.axes):
            nodes = np.asarray(nodes, dtype=float)
            x = np.clip(points[:, d], nodes[0], nodes[-1])
            i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
            t = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
            idx.append(i)
            frac.append(t)
        out = np.zeros(len(points))
        for corner in itertools.product((0, 1), repeat=len(self.axes)):
            weight = np.ones(len(points))
            sel = []
            for d, bit in enumerate(corner):
                weight *= frac[d] if bit else (1.0 - frac[d])
                sel.append(idx[d] + bit)
            out += weight * np.asarray(self.table)[tuple(sel)]
        return out

    def maximum(self) -> float:
        return float(np.max(self.table))


@dataclass(frozen=True)
class TypeSpace:
    """One agent type: a boxed support with a density and a mass share.

    ``predicate`` optionally restricts the box (e.g. a disk inside its
    bounding square). ``mass_share`` is this type's fraction of the unit
    total population mass.
    """

    index: int
    lo: np.ndarray
    hi: np.ndarray
    density: object = field(default_factory=UniformDensity)
    predicate: Optional[Predicate] = None
    mass_share: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ConfigError("support box lo/hi must be 1-d arrays of equal length")
        if not np.all(self.hi > self.lo):
            raise ConfigError("support box must have nonempty interior")
        if not (0.0 < self.mass_share <= 1.0):
            raise ConfigError("mass_share must lie in (0, 1]")

    @property
    def dimension(self) -> int:
        return len(self.lo)

    def contains(self, points: np.ndarray) -> np.ndarray:
        mask = np.all((points >= self.lo) & (points <= self.hi), axis=1)
        if self.predicate is not None:
            mask &= np.asarray(self.predicate(points), dtype=bool)
        return mask

    def density_values(self, points: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.density.values(points), dtype=float)
        if np.any(vals < 0):
            raise ConfigError("density must be nonnegative on the support")
        return vals


@dataclass(frozen=True)
class TypeSample:
    """Quadrature cloud for one type: points, weights and density scaling.

    ``density_scale`` maps the raw density to the normalized one (total mass
    one across the whole population), which line integrals over borders need.
    """

    space: TypeSpace
    points: np.ndarray
    weights: np.ndarray
    density_scale: float

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    def normalized_density(self, points: np.ndarray) -> np.ndarray:
        return self.space.density_values(points) * self.density_scale


@dataclass(frozen=True)
class SampledMeasure:
    """Immutable weighted-sample measure over one or more type spaces."""

    samples: tuple  # tuple[TypeSample, ...], ordered by type index
    provenance: str
    resolution: dict

    @property
    def q(self) -> int:
        return len(self.samples)

    @property
    def total_mass(self) -> float:
        return float(sum(s.mass for s in self.samples))

    def single(self) -> TypeSample:
        if self.q != 1:
            raise ConfigError("operation requires a single-type population")
        return self.samples[0]

    @property
    def max_weight(self) -> float:
        return float(max(np.max(s.weights) for s in self.samples))

    def write_csv(self, path) -> None:
        """Debug dump: one row per sample point (type, coordinates, weight)."""
        import os
        k_max = max(s.space.dimension for s in self.samples)
        header = ["type"] + [f"x_{d+1}" for d in range(k_max)] + ["w"]
        lines = [",".join(header)]
        for s in self.samples:
            for x, w in zip(s.points, s.weights):
                coords = [repr(float(c)) for c in x] + [""] * (k_max - len(x))
                lines.append(",".join([str(s.space.index)] + coords + [repr(float(w))]))
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _finalize(space: TypeSpace, points: np.ndarray, raw_weights: np.ndarray,
              provenance: str, resolution: dict) -> SampledMeasure:
    keep = raw_weights > 0
    points = points[keep]
    raw_weights = raw_weights[keep]
    if len(points) == 0:
        raise SupportEmptyError("no sample point carries positive mass", type_index=space.index)
    raw_mass = float(np.sum(raw_weights))
    scale = space.mass_share / raw_mass
    sample = TypeSample(space=space, points=points, weights=raw_weights * scale,
                        density_scale=scale)
    return SampledMeasure(samples=(sample,), provenance=provenance, resolution=resolution)


def build_grid_measure(space: TypeSpace, cells_per_axis: int) -> SampledMeasure:
    """Midpoint-rule quadrature: one point per grid cell inside the support.

    Each point's raw weight is density times cell volume; weights are then
    normalized so the type carries exactly its mass share.
    """
    if cells_per_axis < 2:
        raise ConfigError("cells_per_axis must be at least 2")
    k = space.dimension
    axes = [space.lo[d] + (np.arange(cells_per_axis) + 0.5) * (space.hi[d] - space.lo[d]) / cells_per_axis
            for d in range(k)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    inside = space.contains(points)
    if not np.any(inside):
        raise SupportEmptyError("no cell midpoint passes the support membership test",
                                type_index=space.index)
    points = points[inside]
    cell_volume = float(np.prod((space.hi - space.lo) / cells_per_axis))
    raw = space.density_values(points) * cell_volume
    return _finalize(space, points, raw, "grid",
                     {"kind": "grid", "cells_per_axis": int(cells_per_axis)})


def build_monte_carlo_measure(space: TypeSpace, n: int, seed: int) -> SampledMeasure:
    """``n`` i.i.d. draws from the density via rejection inside the box.

    Equal weights mass_share/n; reproducible for a fixed seed. Raises when
    the acceptance rate over the trial budget falls below 1e-4.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = np.random.default_rng(seed)
    density_max = float(space.density.maximum())
    accepted = []
    proposed = 0
    got = 0
    batch = max(4 * n, 1024)
    while got < n:
        pts = rng.uniform(space.lo, space.hi, size=(batch, space.dimension))
        u = rng.uniform(0.0, density_max, size=batch)
        mask = space.contains(pts) & (u <= space.density_values(pts))
        proposed += batch
        take = pts[mask][: n - got]
        if len(take):
            accepted.append(take)
            got += len(take)
        if proposed >= batch and got / proposed < 1e-4 and proposed > 100 * n:
            raise RejectionRateExceededError(
                "rejection sampling acceptance below 1e-4", type_index=space.index,
                proposed=proposed, accepted=got)
    points = np.concatenate(accepted, axis=0)
    raw = np.full(n, 1.0)
    return _finalize(space, points, raw, "monte-carlo",
                     {"kind": "monte-carlo", "n": int(n), "seed": int(seed)})


def merge_measures(measures: Sequence[SampledMeasure]) -> SampledMeasure:
    """Combine per-type measures into one population; shares must sum to 1."""
    samples = tuple(s for m in measures for s in m.samples)
    total = sum(s.space.mass_share for s in samples)
    if abs(total - 1.0) > 1e-12:
        raise ConfigError(f"type mass shares sum to {total!r}, expected 1")
    indices = [s.space.index for s in samples]
    if sorted(indices) != list(range(1, len(samples) + 1)):
        raise ConfigError("type indices must be 1..q without gaps")
    samples = tuple(sorted(samples, key=lambda s: s.space.index))
    return SampledMeasure(samples=samples, provenance="merged",
                          resolution={"kind": "merged",
                                      "parts": [m.resolution for m in measures]})


def measure_of(mu: SampledMeasure, predicate: Predicate) -> float:
    """Mass of the point set satisfying ``predicate``.

    Additive over disjoint predicates and monotone under implication, since
    it is a plain weighted count over the fixed sample.
    """
    total = 0.0
    for s in mu.samples:
        mask = np.asarray(predicate(s.points), dtype=bool)
        total += float(np.sum(s.weights[mask]))
    return total
