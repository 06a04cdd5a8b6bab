"""Agent cost models built from composable terms.

A cost model assigns each community ``i`` a per-agent cost c_i(x, m, v, z)
where ``x`` is the agent's type point, ``m`` the community size vector,
``v`` endogenous community characteristics and ``z`` provider parameters.
Models are sums of declarative terms (distance, shared fixed cost, entry
fee, characteristic taste, cross-community spillover), which keeps the
configuration file format declarative while exposing analytic gradients and
structural flags (separability, dependence on other sizes) that the
stability and welfare analyses rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (AssumptionViolatedError, ConfigError, SingularPointError,
                     ZeroSizeCommunityError)


@dataclass(frozen=True)
class BlockLayout:
    """Per-community block sizes inside a flat characteristics or parameter vector."""

    sizes: tuple

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if any(s < 0 for s in self.sizes):
            raise ConfigError("block sizes must be nonnegative")

    @property
    def total(self) -> int:
        return sum(self.sizes)

    def block(self, i: int) -> slice:
        start = sum(self.sizes[:i])
        return slice(start, start + self.sizes[i])


EMPTY_LAYOUT = BlockLayout(sizes=())


# ---------------------------------------------------------------------------
# Terms. Each term contributes a (S, n) cost matrix for S points and n
# communities, plus its own analytic pieces of grad_x and d/dm_i.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricTerm:
    """scale * ||x - center_i||_p. Centers are fixed or read from provider blocks."""

    centers: Optional[np.ndarray] = None  # (n, k); None when provider-located
    scale: float = 1.0
    exponent: float = 2.0
    centers_from_provider: bool = False

    def __post_init__(self):
        if self.centers is not None:
            object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float))
        if self.exponent < 1.0:
            raise ConfigError("metric exponent must be >= 1")
        if self.centers is None and not self.centers_from_provider:
            raise ConfigError("metric term needs fixed centers or provider-located ones")

    def resolve_centers(self, model: "CostModel", state) -> np.ndarray:
        if not self.centers_from_provider:
            return self.centers
        if model.z_layout.total == 0:
            raise ConfigError("provider-located centers need a provider parameter layout")
        rows = []
        for i in range(model.n):
            block = state.z[model.z_layout.block(i)]
            if len(block) != model.dimension:
                raise ConfigError("provider block size must equal the space dimension "
                                  "for provider-located centers")
            rows.append(block)
        return np.asarray(rows, dtype=float)

    def values(self, model, points, state, j):
        centers = self.resolve_centers(model, state)
        diff = points[:, None, :] - centers[None, :, :]
        if self.exponent == 2.0:
            d = np.sqrt(np.sum(diff * diff, axis=2))
        else:
            d = np.sum(np.abs(diff) ** self.exponent, axis=2) ** (1.0 / self.exponent)
        return self.scale * d

    def grad_x(self, model, i, x, state, j, h_x):
        centers = self.resolve_centers(model, state)
        u = x - centers[i]
        p = self.exponent
        norm = np.sum(np.abs(u) ** p) ** (1.0 / p)
        if norm < h_x:
            raise SingularPointError(
                "gradient requested within h_x of a community center",
                community=i + 1, distance=float(norm))
        if p == 2.0:
            return self.scale * u / norm
        return self.scale * np.sign(u) * (np.abs(u) / norm) ** (p - 1.0)

    def dm(self, model, i, x, state, j):
        return 0.0


@dataclass(frozen=True)
class FixedShareTerm:
    """g_i / m_i: an equally shared fixed cost, diverging as the community empties."""

    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g", np.atleast_1d(np.asarray(self.g, dtype=float)))
        if np.any(self.g < 0):
            raise ConfigError("fixed cost g must be nonnegative")

    def values(self, model, points, state, j):
        m = state.m
        if np.any(m <= 0):
            raise ZeroSizeCommunityError("cost requested at a zero community size")
        return np.broadcast_to(self.g / m, (len(points), model.n)).copy()

    def grad_x(self, model, i, x, state, j, h_x):
        return np.zeros_like(x)

    def dm(self, model, i, x, state, j):
        if state.m[i] <= 0:
            raise ZeroSizeCommunityError("size derivative requested at zero size")
        return -float(self.g[i] if self.g.size > 1 else self.g[0]) / state.m[i] ** 2

    def value_at_size(self, i: int, m_i: float) -> float:
        g = float(self.g[i] if self.g.size > 1 else self.g[0])
        if m_i <= 0:
            raise ZeroSizeCommunityError("cost requested at a zero community size")
        return g / m_i


@dataclass(frozen=True)
class EntryFeeTerm:
    """Adds one coordinate of the community's provider block as a flat fee."""

    index: int = 0

    def values(self, model, points, state, j):
        fees = np.array([state.z[model.z_layout.block(i)][self.index]
                         for i in range(model.n)])
        return np.broadcast_to(fees, (len(points), model.n)).copy()

    def grad_x(self, model, i, x, state, j, h_x):
        return np.zeros_like(x)

    def dm(self, model, i, x, state, j):
        return 0.0


@dataclass(frozen=True)
class CharacteristicTasteTerm:
    """Linear taste over the community's own characteristic block: w_i . v_i."""

    weights: tuple  # per community, a coefficient sequence matching its v block

    def values(self, model, points, state, j):
        out = np.zeros(model.n)
        for i in range(model.n):
            w = np.asarray(self.weights[i], dtype=float)
            block = state.v[model.v_layout.block(i)]
            if len(w) != len(block):
                raise ConfigError("taste weights must match the characteristic block size")
            out[i] = float(w @ block)
        return np.broadcast_to(out, (len(points), model.n)).copy()

    def grad_x(self, model, i, x, state, j, h_x):
        return np.zeros_like(x)

    def dm(self, model, i, x, state, j):
        return 0.0


@dataclass(frozen=True)
class CrossSizeTerm:
    """Spillover linear in the other communities' sizes: sum_{h != i} w[i,h] m_h."""

    weights: np.ndarray  # (n, n); the diagonal is ignored

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    def values(self, model, points, state, j):
        w = self.weights - np.diag(np.diag(self.weights))
        out = w @ state.m
        return np.broadcast_to(out, (len(points), model.n)).copy()

    def grad_x(self, model, i, x, state, j, h_x):
        return np.zeros_like(x)

    def dm(self, model, i, x, state, j):
        return 0.0


@dataclass(frozen=True)
class ConstantTerm:
    values_per_community: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values_per_community",
                           np.atleast_1d(np.asarray(self.values_per_community, dtype=float)))

    def values(self, model, points, state, j):
        c = self.values_per_community
        if c.size == 1:
            c = np.full(model.n, float(c[0]))
        return np.broadcast_to(c, (len(points), model.n)).copy()

    def grad_x(self, model, i, x, state, j, h_x):
        return np.zeros_like(x)

    def dm(self, model, i, x, state, j):
        return 0.0


@dataclass(frozen=True)
class CustomTerm:
    """Escape hatch for tests: fn(type_index, points, state) -> (S, n) cost matrix.

    Gradients fall back to central differences; structural flags must be
    declared because they cannot be inferred from a callable.
    """

    fn: Callable
    separable: bool = False
    depends_on_other_sizes: bool = False
    depends_on_characteristics: bool = False
    depends_on_provider_params: bool = False

    def values(self, model, points, state, j):
        out = np.asarray(self.fn(j, points, state), dtype=float)
        if out.shape != (len(points), model.n):
            raise ConfigError("custom term must return an (S, n) matrix")
        return out

    def grad_x(self, model, i, x, state, j, h_x):
        return _central_grad_x(lambda pt: self.values(model, pt[None, :], state, j)[0, i],
                               x, h_x)

    def dm(self, model, i, x, state, j):
        h = model.h_m * max(1.0, abs(state.m[i]))
        up = state.with_m_component(i, state.m[i] + h)
        dn = state.with_m_component(i, state.m[i] - h)
        fu = self.values(model, x[None, :], up, j)[0, i]
        fd = self.values(model, x[None, :], dn, j)[0, i]
        return float((fu - fd) / (2 * h))


def _central_grad_x(fn, x, h):
    out = np.zeros_like(x, dtype=float)
    for d in range(len(x)):
        step = h * max(1.0, abs(x[d]))
        xp = x.copy(); xp[d] += step
        xm = x.copy(); xm[d] -= step
        out[d] = (fn(xp) - fn(xm)) / (2 * step)
    return out


# ---------------------------------------------------------------------------
# The model.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    """Sum of cost terms over ``n`` communities in a ``dimension``-d type space."""

    n: int
    dimension: int
    terms: tuple
    v_layout: BlockLayout = EMPTY_LAYOUT
    z_layout: BlockLayout = EMPTY_LAYOUT
    gradient_mode: str = "analytic"  # or "central-difference"
    h_x: float = 1e-5
    h_m: float = 1e-5

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("need at least one community")
        if self.v_layout.sizes and len(self.v_layout.sizes) != self.n:
            raise ConfigError("characteristic layout must have one block per community")
        if self.z_layout.sizes and len(self.z_layout.sizes) != self.n:
            raise ConfigError("provider layout must have one block per community")
        for t in self.terms:
            if isinstance(t, MetricTerm) and t.centers is not None:
                if t.centers.shape != (self.n, self.dimension):
                    raise ConfigError("metric centers must be an (n, k) array")

    # -- structural flags ---------------------------------------------------

    @property
    def depends_on_other_sizes(self) -> bool:
        return any(isinstance(t, CrossSizeTerm) or
                   (isinstance(t, CustomTerm) and t.depends_on_other_sizes)
                   for t in self.terms)

    @property
    def depends_on_characteristics(self) -> bool:
        return any(isinstance(t, CharacteristicTasteTerm) or
                   (isinstance(t, CustomTerm) and t.depends_on_characteristics)
                   for t in self.terms)

    @property
    def depends_on_provider_params(self) -> bool:
        return any(isinstance(t, EntryFeeTerm) or
                   (isinstance(t, MetricTerm) and t.centers_from_provider) or
                   (isinstance(t, CustomTerm) and t.depends_on_provider_params)
                   for t in self.terms)

    @property
    def separable(self) -> bool:
        """True when c_i(x, m) = c^d_i(x) + c^s_i(m_i) exactly."""
        for t in self.terms:
            if isinstance(t, (CrossSizeTerm, CharacteristicTasteTerm)):
                return False
            if isinstance(t, MetricTerm) and t.centers_from_provider:
                return False
            if isinstance(t, EntryFeeTerm):
                return False
            if isinstance(t, CustomTerm) and not t.separable:
                return False
        return True

    # -- evaluation ---------------------------------------------------------

    def cost_matrix(self, points: np.ndarray, state, type_index: int = 1) -> np.ndarray:
        """Costs of all communities at all points: an (S, n) matrix."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(points), self.n))
        for t in self.terms:
            out += t.values(self, points, state, type_index)
        return out

    def distance_matrix(self, points: np.ndarray, state, type_index: int = 1) -> np.ndarray:
        """The x-only part of the cost (distance plus constants); needs separability."""
        if not self.separable:
            raise ConfigError("distance component is defined for separable models only")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(points), self.n))
        for t in self.terms:
            if isinstance(t, (MetricTerm, ConstantTerm)):
                out += t.values(self, points, state, type_index)
            elif isinstance(t, CustomTerm):
                out += t.values(self, points, state, type_index)
        return out

    def size_cost(self, i: int, m_i: float) -> float:
        """The m_i-only part of the cost for separable models."""
        if not self.separable:
            raise ConfigError("size component is defined for separable models only")
        total = 0.0
        for t in self.terms:
            if isinstance(t, FixedShareTerm):
                total += t.value_at_size(i, m_i)
        return total


def eval_cost(model: CostModel, j: int, i: int, x, state) -> float:
    """Cost of community ``i`` (0-based) for a type-``j`` agent at point ``x``."""
    x = np.asarray(x, dtype=float)
    return float(model.cost_matrix(x[None, :], state, j)[0, i])


def grad_x_cost(model: CostModel, j: int, i: int, x, state) -> np.ndarray:
    """Gradient of c_i with respect to the agent's type point.

    Analytic for built-in terms; central differences with step ``h_x`` in
    central-difference mode or for custom terms.
    """
    x = np.asarray(x, dtype=float)
    if model.gradient_mode == "central-difference":
        return _central_grad_x(lambda pt: eval_cost(model, j, i, pt, state), x, model.h_x)
    out = np.zeros_like(x)
    for t in model.terms:
        out += t.grad_x(model, i, x, state, j, model.h_x)
    return out


def dcost_dm(model: CostModel, j: int, i: int, x, state) -> float:
    """Own-size derivative of c_i; for a shared fixed cost this is -g/m_i^2."""
    x = np.asarray(x, dtype=float)
    if model.gradient_mode == "central-difference":
        h = model.h_m * max(1.0, abs(state.m[i]))
        up = state.with_m_component(i, state.m[i] + h)
        dn = state.with_m_component(i, state.m[i] - h)
        return float((eval_cost(model, j, i, x, up) - eval_cost(model, j, i, x, dn)) / (2 * h))
    return float(sum(t.dm(model, i, x, state, j) for t in model.terms))


def metric_fixed_share(centers, g, scale: float = 1.0, exponent: float = 2.0,
                       fees=None) -> CostModel:
    """The benchmark model: distance to a fixed center plus an equal fixed-cost share."""
    centers = np.asarray(centers, dtype=float)
    n, k = centers.shape
    terms = [MetricTerm(centers=centers, scale=scale, exponent=exponent),
             FixedShareTerm(g=np.broadcast_to(np.asarray(g, dtype=float), (n,)).copy())]
    if fees is not None:
        terms.append(ConstantTerm(values_per_community=np.asarray(fees, dtype=float)))
    return CostModel(n=n, dimension=k, terms=tuple(terms))


# ---------------------------------------------------------------------------
# Diagnostics for the standing assumptions.
# ---------------------------------------------------------------------------

def indifference_gap_measure(model: CostModel, mu, state, i1: int, i2: int,
                             delta: float) -> float:
    """Mass of agents within a cost band of total width ``delta`` around
    indifference between communities ``i1`` and ``i2``.

    For models with strict preferences the value vanishes linearly in delta;
    the slope approaches the border line integral of f / ||grad c_j - grad c_i||.
    A value bounded away from zero as delta shrinks flags a positive-measure
    indifferent set (the knife-edge failure mode).
    """
    if delta < 0:
        raise ConfigError("delta must be nonnegative")
    total = 0.0
    for s in mu.samples:
        c = model.cost_matrix(s.points, state, s.space.index)
        band = np.abs(c[:, i1] - c[:, i2]) < delta / 2.0
        total += float(np.sum(s.weights[band]))
    return total


def _term_lower_bound(model, term, points, i, m_i, type_index):
    """Pointwise lower bound of a term's community-``i`` cost over all
    admissible other sizes, characteristics and provider parameters."""
    if isinstance(term, MetricTerm):
        if term.centers_from_provider:
            return np.zeros(len(points))
        diff = points - term.centers[i][None, :]
        p = term.exponent
        if p == 2.0:
            d = np.sqrt(np.sum(diff * diff, axis=1))
        else:
            d = np.sum(np.abs(diff) ** p, axis=1) ** (1.0 / p)
        return term.scale * d
    if isinstance(term, FixedShareTerm):
        return np.full(len(points), term.value_at_size(i, m_i))
    if isinstance(term, ConstantTerm):
        c = term.values_per_community
        val = float(c[0] if c.size == 1 else c[i])
        return np.full(len(points), val)
    if isinstance(term, EntryFeeTerm):
        return np.zeros(len(points))  # fees live in [0, 1]
    if isinstance(term, CharacteristicTasteTerm):
        w = np.asarray(term.weights[i], dtype=float)
        return np.full(len(points), float(np.sum(np.minimum(w, 0.0))))  # v in [0, 1]
    if isinstance(term, CrossSizeTerm):
        w = term.weights[i].copy()
        w[i] = np.inf
        return np.full(len(points), min(0.0, float(np.min(w))) * (1.0 - m_i))
    if isinstance(term, CustomTerm):
        raise ConfigError("small-group floor needs declarative terms, not custom ones")
    raise ConfigError(f"unknown term type {type(term).__name__}")


def small_group_floor(model: CostModel, mu, A: float, tol: float = 1e-9) -> np.ndarray:
    """Largest size floor per community below which every agent's cost exceeds ``A``.

    For each community the floor is the largest m0 such that for every
    sampled point and all admissible other sizes, characteristics and
    provider parameters, c_i(x, m0, ...) > A. Found by bisection on the
    pointwise cost lower envelope; raises when no such floor exists below
    1/n (no cost divergence at small sizes, e.g. g = 0).
    """
    floors = np.zeros(model.n)
    for i in range(model.n):
        def min_cost(m_i: float) -> float:
            worst = np.inf
            for s in mu.samples:
                total = np.zeros(len(s.points))
                for t in model.terms:
                    total += _term_lower_bound(model, t, s.points, i, m_i, s.space.index)
                worst = min(worst, float(np.min(total)))
            return worst

        lo = 1e-12
        hi = 1.0 / model.n
        if min_cost(lo) <= A:
            raise AssumptionViolatedError(
                "costs do not diverge as the community size goes to zero",
                community=i + 1, bound=A)
        if min_cost(hi) > A:
            floors[i] = hi
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if min_cost(mid) > A:
                lo = mid
            else:
                hi = mid
        floors[i] = lo
    return floors


def max_attainable_cost(model: CostModel, mu, n_states: int = 64, seed: int = 0) -> float:
    """Estimate of the worst best-available cost over admissible states.

    Used to pick the bound fed into the small-group floor: any community
    priced above this is avoided by every agent regardless of the rest of
    the state.
    """
    from .partition import NominalState  # local import to avoid a cycle

    rng = np.random.default_rng(seed)
    n = model.n
    eps = min(1e-3, 0.5 / n)
    states = [np.full(n, 1.0 / n)]
    for i in range(n):
        vertex = np.full(n, eps)
        vertex[i] = 1.0 - eps * (n - 1)
        states.append(vertex)
    for _ in range(max(0, n_states - len(states))):
        draw = rng.dirichlet(np.ones(n))
        states.append(np.clip(draw, eps, None) / np.sum(np.clip(draw, eps, None)))
    v_mid = np.full(model.v_layout.total, 0.5)
    z_mid = np.full(model.z_layout.total, 0.5)
    worst = 0.0
    for m in states:
        state = NominalState(m=m / np.sum(m), v=v_mid, z=z_mid, epsilon=eps)
        for s in mu.samples:
            c = model.cost_matrix(s.points, state, s.space.index)
            worst = max(worst, float(np.max(np.min(c, axis=1))))
    return worst
