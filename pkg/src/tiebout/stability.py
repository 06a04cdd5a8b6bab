"""Group-deviation stability of certified equilibria.

Two notions are evaluated. Weak stability asks whether any small ball of
agents can switch communities with strictly mutual benefit; a randomized
search builds candidate groups from cost bands around border points and
replays each actual deviation at the post-move sizes. Strong stability
drops the diameter restriction to arbitrary positive-measure sets; it is
certified by a closed-form border condition (the arc integral of density
over the gradient gap plus the reciprocal own-size cost slope must be
negative) and falsified, when it fails, by explicit border-strip deviations.

The border condition is a (k-1)-dimensional integral and presumes a type
space of dimension two or more; on one-dimensional spaces the condition
degenerates to a point formula and the results carry an explicit extension
flag, since the smallness argument that protects weak stability needs
k >= 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .costs import CostModel, dcost_dm
from .errors import DegenerateGradientError, EmptyBorderError
from .measure import SampledMeasure
from .partition import extract_border

_TYPE = 1  # stability analysis runs on single-type populations


@dataclass(frozen=True)
class StabilitySettings:
    eps_ball: float = 0.02
    eps_mass: float = 0.05
    trials: int = 500
    seed: int = 0
    border_grid: int = 512
    run_strong_search: bool = True


@dataclass
class DeviationCandidate:
    """A set of co-moving agents: members of ``source`` switching to ``target``."""

    source: int
    target: int
    member_indices: np.ndarray
    mass: float
    gains: Optional[np.ndarray] = None
    worst_member_gain: float = -np.inf

    def to_dict(self) -> dict:
        return {"source": self.source + 1, "target": self.target + 1,
                "mass": self.mass,
                "members": [int(i) for i in self.member_indices[:64]],
                "member_count": int(len(self.member_indices)),
                "worst_member_gain": self.worst_member_gain}


@dataclass
class StrongConditionResult:
    i: int
    j: int
    integral_value: float
    scale_term: float
    satisfied: bool
    dimension_extension: bool = False
    window_checked: int = 1

    @property
    def condition_sum(self) -> float:
        return self.integral_value + self.scale_term

    def to_dict(self) -> dict:
        return {"pair": (self.i + 1, self.j + 1),
                "integral_value": self.integral_value,
                "scale_term": self.scale_term,
                "condition_sum": self.condition_sum,
                "satisfied": self.satisfied,
                "dimension_extension": self.dimension_extension,
                "windows_checked": self.window_checked}


@dataclass
class SearchResult:
    found: bool
    counterexample: Optional[DeviationCandidate] = None
    trials_run: int = 0
    resolution_warning: bool = False

    def to_dict(self) -> dict:
        return {"found": self.found,
                "counterexample": self.counterexample.to_dict()
                if self.counterexample else None,
                "trials_run": self.trials_run,
                "resolution_warning": self.resolution_warning}


@dataclass
class StabilityVerdict:
    weak: SearchResult
    conditions: list
    strong_search: Optional[SearchResult]
    classification: str
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"classification": self.classification,
                "weak": self.weak.to_dict(),
                "conditions": [c.to_dict() for c in self.conditions],
                "strong_search": self.strong_search.to_dict()
                if self.strong_search else None,
                "notes": list(self.notes)}


# ---------------------------------------------------------------------------
# Deviation replay.
# ---------------------------------------------------------------------------

def verify_deviation(model: CostModel, mu: SampledMeasure, eq,
                     candidate: DeviationCandidate) -> DeviationCandidate:
    """Replay a deviation at the post-move sizes and fill in per-member gains.

    Gain of a member at x is its current cost (at the equilibrium sizes)
    minus its cost in the target community once the moved mass is counted
    there. Profitable means strictly positive gain for every member; an
    empty candidate is vacuously non-profitable.
    """
    sample = mu.single()
    members = np.asarray(candidate.member_indices, dtype=int)
    if len(members) == 0:
        candidate.gains = np.zeros(0)
        candidate.worst_member_gain = -np.inf
        candidate.mass = 0.0
        return candidate
    state = eq.state
    dm = float(np.sum(sample.weights[members]))
    m_new = state.m.copy()
    m_new[candidate.source] -= dm
    m_new[candidate.target] += dm
    state_new = state.with_m(np.maximum(m_new, 1e-12) /
                             np.sum(np.maximum(m_new, 1e-12)))
    pts = sample.points[members]
    c_now = model.cost_matrix(pts, state, _TYPE)[:, candidate.source]
    c_after = model.cost_matrix(pts, state_new, _TYPE)[:, candidate.target]
    candidate.mass = dm
    candidate.gains = c_now - c_after
    candidate.worst_member_gain = float(np.min(candidate.gains))
    return candidate


def _is_profitable(candidate: DeviationCandidate, threshold: float = 0.0) -> bool:
    # mutual benefit: strictly positive gain for every member
    return candidate.gains is not None and len(candidate.gains) > 0 \
        and candidate.worst_member_gain > threshold


def resolution_gain(model: CostModel, mu: SampledMeasure, eq,
                    edge_length: float = 0.0) -> float:
    """Smallest gain distinguishable from quadrature granularity.

    Candidate groups are cost-band sets; on a weighted sample the band's
    mass is quantized, overstated by up to the atoms sitting within one
    grid cell of the band edge (``edge_length`` is the edge's extent: the
    ball diameter for weak candidates, the border length for strips). That
    mass error times the size-cost slope bounds the spurious fee gain a
    sampled deviation can show over its continuum counterpart. Deviations
    whose worst member gains less than this are discretization artifacts,
    not evidence against stability; genuinely profitable deviations clear
    the bound once the grid resolves them.
    """
    sample = mu.single()
    x0 = sample.points[0]
    slope = max(abs(dcost_dm(model, _TYPE, i, x0, eq.state))
                for i in range(model.n))
    wt = mu.max_weight
    k = sample.space.dimension
    if k == 1:
        dm_quant = 2.0 * wt
    else:
        d_max = float(np.max(sample.normalized_density(sample.points)))
        cell = (wt / d_max) ** (1.0 / k)
        dm_quant = d_max * (edge_length + 2 * cell) * cell + wt
    return 1.5 * slope * dm_quant


# ---------------------------------------------------------------------------
# Border scaffolding shared by the searches.
# ---------------------------------------------------------------------------

def _adjacent_borders(model, mu, eq, border_grid):
    """Borders for each unordered adjacent pair at the equilibrium state."""
    borders = {}
    for i in range(model.n):
        for j in range(i + 1, model.n):
            try:
                borders[(i, j)] = extract_border(model, mu, eq.state, i, j,
                                                 border_grid)
            except (EmptyBorderError, DegenerateGradientError):
                continue
    return borders


def _band_values(model, mu, eq, source, target):
    """Cost gap c_target - c_source for members of ``source`` (their cost
    of being indifferent; zero on the border, growing inward)."""
    sample = mu.single()
    labels = eq.partition.labels[0]
    member_idx = np.nonzero(labels == source)[0]
    c = model.cost_matrix(sample.points[member_idx], eq.state, _TYPE)
    band = c[:, target] - c[:, source]
    return member_idx, band


def weak_stability_search(model: CostModel, mu: SampledMeasure, eq,
                          eps_ball: float, trials: int, seed: int,
                          border_grid: int = 512) -> SearchResult:
    """Randomized search for a mutually profitable move by a small ball.

    Each trial centers a ball of radius ``eps_ball`` on a border point and
    takes the source-community members inside it that sit within a sampled
    cost band of the border (the co-moving group of the smallness argument).
    Per-trial RNG streams derive from (seed, trial), so results do not
    depend on scheduling. Returns the first profitable counterexample.
    """
    borders = _adjacent_borders(model, mu, eq, border_grid)
    if not borders:
        return SearchResult(found=False, trials_run=0)
    pair_keys = sorted(borders.keys())
    sample = mu.single()
    threshold = resolution_gain(model, mu, eq, edge_length=2 * eps_ball)
    band_cache = {}
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        i, j = pair_keys[int(rng.integers(len(pair_keys)))]
        source, target = (i, j) if rng.integers(2) == 0 else (j, i)
        border = borders[(i, j)]
        center = border.vertices[int(rng.integers(len(border.vertices)))]
        if (source, target) not in band_cache:
            band_cache[(source, target)] = _band_values(model, mu, eq, source, target)
        member_idx, band = band_cache[(source, target)]
        pts = sample.points[member_idx]
        in_ball = np.linalg.norm(pts - center[None, :], axis=1) <= eps_ball
        if not np.any(in_ball):
            continue
        local_band = band[in_ball]
        u = float(rng.uniform(0.0, 1.0))
        dgamma = float(np.quantile(local_band, u))
        chosen = member_idx[in_ball][local_band <= dgamma]
        if len(chosen) == 0:
            continue
        candidate = DeviationCandidate(source=source, target=target,
                                       member_indices=chosen, mass=0.0)
        verify_deviation(model, mu, eq, candidate)
        if _is_profitable(candidate, threshold):
            return SearchResult(found=True, counterexample=candidate,
                                trials_run=t + 1)
    return SearchResult(found=False, trials_run=trials)


# ---------------------------------------------------------------------------
# Strong stability: certificate and falsifier.
# ---------------------------------------------------------------------------

def strong_stability_condition(model: CostModel, mu: SampledMeasure, eq,
                               i: int, j: int,
                               border_grid: int = 512) -> StrongConditionResult:
    """Border-integral certificate for stability against arbitrary small sets.

    Computes the arc integral of density over the gradient gap along the
    (i, j) border plus the reciprocal of the target community's own-size
    cost slope. For separable costs the slope is position-free, the worst
    deviating set is the whole border, and the certificate is a single sum.
    Otherwise the condition is evaluated over a sliding family of contiguous
    border windows, pairing each window with its most scale-hungry member
    (largest reciprocal slope magnitude); all windows must come out negative.
    """
    border = extract_border(model, mu, eq.state, i, j, border_grid)
    one_d = border.dimension == 1
    integrand = border.density / border.grad_gap
    full_integral = border.line_integral(integrand)
    if model.separable or one_d:
        y = border.vertices[0]
        scale = 1.0 / dcost_dm(model, _TYPE, j, y, eq.state)
        total = full_integral + scale
        return StrongConditionResult(i=i, j=j, integral_value=full_integral,
                                     scale_term=scale, satisfied=total < 0,
                                     dimension_extension=one_d)
    slopes = np.array([1.0 / dcost_dm(model, _TYPE, j, y, eq.state)
                       for y in border.vertices])
    V = len(border.vertices)
    worst = (-np.inf, None)
    checked = 0
    widths = sorted({max(2, int(round(frac * V))) for frac in (0.125, 0.25, 0.5, 1.0)})
    step = max(1, V // 16)
    satisfied = True
    for width in widths:
        for start in range(0, max(1, V - width + 1), step):
            segment = slice(start, start + width)
            wint = float(np.sum(integrand[segment] * border.arc_weight[segment]))
            y_idx = segment.start + int(np.argmax(np.abs(slopes[segment])))
            total = wint + slopes[y_idx]
            checked += 1
            if total >= 0:
                satisfied = False
            if total > worst[0]:
                worst = (total, (wint, slopes[y_idx]))
    wint, scale = worst[1]
    return StrongConditionResult(i=i, j=j, integral_value=wint, scale_term=scale,
                                 satisfied=satisfied, window_checked=checked)


def strong_stability_search(model: CostModel, mu: SampledMeasure, eq,
                            eps_mass: float, trials: int, seed: int,
                            border_grid: int = 512) -> SearchResult:
    """Search for a profitable deviation by a positive-measure border strip.

    Deterministically tries, for every ordered adjacent pair, the full
    border strip of mass about ``eps_mass`` (all source members within the
    cost band that collects that mass), then randomized contiguous border
    windows. Returns the first profitable candidate; a strip thinner than
    one sample weight is vacuous and only sets a resolution warning.
    """
    borders = _adjacent_borders(model, mu, eq, border_grid)
    if not borders:
        return SearchResult(found=False, trials_run=0)
    sample = mu.single()
    longest = max(max(b.length, 0.0) for b in borders.values())
    threshold = resolution_gain(model, mu, eq, edge_length=longest)
    warn = False
    band_cache = {}
    ordered_pairs = sorted(list(borders.keys()) +
                           [(j, i) for (i, j) in borders.keys()])
    for source, target in ordered_pairs:
        band_cache[(source, target)] = _band_values(model, mu, eq, source, target)
        member_idx, band = band_cache[(source, target)]
        order = np.argsort(band, kind="stable")
        masses = np.cumsum(sample.weights[member_idx][order])
        count = int(np.searchsorted(masses, eps_mass, side="right"))
        if count == 0:
            warn = True
            continue
        chosen = member_idx[order[:count]]
        candidate = DeviationCandidate(source=source, target=target,
                                       member_indices=chosen, mass=0.0)
        verify_deviation(model, mu, eq, candidate)
        if _is_profitable(candidate, threshold):
            return SearchResult(found=True, counterexample=candidate,
                                trials_run=0, resolution_warning=warn)

    nearest_cache = {}
    for t in range(trials):
        rng = np.random.default_rng((seed, 7919 + t))
        keys = sorted(borders.keys())
        i, j = keys[int(rng.integers(len(keys)))]
        source, target = (i, j) if rng.integers(2) == 0 else (j, i)
        border = borders[(i, j)]
        member_idx, band = band_cache[(source, target)]
        if (source, target) not in nearest_cache:
            pts = sample.points[member_idx]
            d = np.linalg.norm(pts[:, None, :] - border.vertices[None, :, :], axis=2)
            nearest_cache[(source, target)] = np.argmin(d, axis=1)
        nearest = nearest_cache[(source, target)]
        V = len(border.vertices)
        if V <= 2:
            width = V  # a point border has no sub-windows
        else:
            width = max(2, int(rng.integers(V // 8 + 2, V + 1)))
        start = int(rng.integers(0, max(1, V - width + 1)))
        in_window = (nearest >= start) & (nearest < start + width)
        if not np.any(in_window):
            continue
        local = band[in_window]
        order = np.argsort(local, kind="stable")
        masses = np.cumsum(sample.weights[member_idx][in_window][order])
        target_mass = float(rng.uniform(0.2, 1.0)) * eps_mass
        count = int(np.searchsorted(masses, target_mass, side="right"))
        if count == 0:
            continue
        chosen = member_idx[in_window][order[:count]]
        candidate = DeviationCandidate(source=source, target=target,
                                       member_indices=chosen, mass=0.0)
        verify_deviation(model, mu, eq, candidate)
        if _is_profitable(candidate, threshold):
            return SearchResult(found=True, counterexample=candidate,
                                trials_run=t + 1, resolution_warning=warn)
    return SearchResult(found=False, trials_run=trials, resolution_warning=warn)


def classify_stability(model: CostModel, mu: SampledMeasure, eq,
                       settings: StabilitySettings) -> StabilityVerdict:
    """Full verdict: weak search, per-pair border certificates, strong search.

    strongly-stable: every pair certificate holds and the strip search finds
    nothing. weakly-stable-only: weak stability holds but some certificate
    fails or a strip deviation exists (bringing the equilibrium down then
    takes a large or preference-diverse group). unstable: the weak search
    itself found a counterexample, which on a compliant two-or-more
    dimensional model indicates a certification error.
    """
    one_d = mu.single().space.dimension == 1
    weak = weak_stability_search(model, mu, eq, settings.eps_ball,
                                 settings.trials, settings.seed,
                                 settings.border_grid)
    conditions = []
    for i in range(model.n):
        for j in range(model.n):
            if i == j:
                continue
            try:
                conditions.append(strong_stability_condition(
                    model, mu, eq, i, j, settings.border_grid))
            except (EmptyBorderError, DegenerateGradientError):
                continue
    strong = None
    if settings.run_strong_search:
        strong = strong_stability_search(model, mu, eq, settings.eps_mass,
                                         settings.trials, settings.seed,
                                         settings.border_grid)
    notes = []
    if one_d:
        notes.append(
            "one-dimensional type space: border certificates use the point "
            "formula and the smallness guarantee for weak stability does not "
            "apply (it needs dimension >= 2)")
    if weak.found:
        if one_d:
            notes.append("weak counterexample found, outside the k >= 2 "
                         "regularity regime")
        else:
            notes.append("weak counterexample on a compliant model: "
                         "certification error, re-examine the equilibrium")
        classification = "unstable"
    else:
        all_satisfied = bool(conditions) and all(c.satisfied for c in conditions)
        strong_clean = strong is None or not strong.found
        if all_satisfied and strong_clean:
            classification = "strongly-stable"
        else:
            classification = "weakly-stable-only"
    return StabilityVerdict(weak=weak, conditions=conditions,
                            strong_search=strong, classification=classification,
                            notes=notes)
