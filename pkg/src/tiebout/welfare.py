"""Welfare aggregation and a randomized Pareto falsification probe.

For separable costs an equilibrium cannot be Pareto-improved while keeping
the same set of active communities: shrinking any community hurts its
best-positioned member through the size term alone. The probe samples
alternative allocations with that active set fixed and reports a
counterexample only if a replayed alternative leaves no agent worse and
some agent strictly better. Absence of counterexamples is evidence, not
proof, and the result says so.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .costs import CostModel
from .errors import NonSeparableModelError
from .measure import SampledMeasure
from .partition import NominalState, Partition, assign
from .equilibrium import project_restricted_simplex


@dataclass
class WelfareSummary:
    total_cost: float
    community_mass: list
    community_mean_cost: list
    community_max_cost: list
    best_positioned_point: list
    best_positioned_cost: list

    def to_dict(self) -> dict:
        return {"total_cost": self.total_cost,
                "community_mass": self.community_mass,
                "community_mean_cost": self.community_mean_cost,
                "community_max_cost": self.community_max_cost,
                "best_positioned_point": self.best_positioned_point,
                "best_positioned_cost": self.best_positioned_cost}


@dataclass
class ParetoProbeResult:
    status: str  # "no-improvement-found" | "counterexample"
    trials_run: int
    counterexample: Optional[dict] = None
    alternative_statuses: list = field(default_factory=list)
    note: str = ("falsification probe: absence of counterexamples is evidence "
                 "for optimality, not a proof")

    def to_dict(self) -> dict:
        return {"status": self.status, "trials_run": self.trials_run,
                "counterexample": self.counterexample,
                "alternative_statuses": self.alternative_statuses,
                "note": self.note}


def aggregate_welfare(model: CostModel, mu: SampledMeasure, partition: Partition,
                      state: NominalState) -> WelfareSummary:
    """Quadrature of assigned costs plus per-community summaries.

    The best-positioned member of a community is the one with the lowest
    distance component (lowest assigned cost when the model is not
    separable); that member pins down the welfare argument for fixed active
    sets, since any reallocation that shrinks the community hurts them.
    """
    n = model.n
    total = 0.0
    mass = np.zeros(n)
    cost_sum = np.zeros(n)
    cost_max = np.full(n, -np.inf)
    best_val = np.full(n, np.inf)
    best_pt = [None] * n
    for t, s in enumerate(mu.samples):
        labels = partition.labels[t]
        costs = partition.assigned_costs[t]
        total += float(np.sum(s.weights * costs))
        position_value = costs
        if model.separable:
            position_value = model.distance_matrix(s.points, state, s.space.index)[
                np.arange(len(s.points)), labels]
        for i in range(n):
            sel = labels == i
            if not np.any(sel):
                continue
            mass[i] += float(np.sum(s.weights[sel]))
            cost_sum[i] += float(np.sum(s.weights[sel] * costs[sel]))
            cost_max[i] = max(cost_max[i], float(np.max(costs[sel])))
            k = int(np.argmin(position_value[sel]))
            if position_value[sel][k] < best_val[i]:
                best_val[i] = float(position_value[sel][k])
                best_pt[i] = [float(c) for c in s.points[sel][k]]
    mean = [cost_sum[i] / mass[i] if mass[i] > 0 else float("nan") for i in range(n)]
    return WelfareSummary(
        total_cost=total,
        community_mass=[float(v) for v in mass],
        community_mean_cost=[float(v) for v in mean],
        community_max_cost=[float(v) if np.isfinite(v) else float("nan")
                            for v in cost_max],
        best_positioned_point=best_pt,
        best_positioned_cost=[float(v) if np.isfinite(v) else float("nan")
                              for v in best_val])


def _allocation_costs(model, mu, labels_per_type, sizes):
    """Per-sample costs of an arbitrary allocation, evaluated at its own
    realized sizes (the only sizes consistent with that allocation)."""
    state = NominalState(m=np.maximum(sizes, 1e-12) / np.sum(np.maximum(sizes, 1e-12)),
                         epsilon=1e-12)
    out = []
    for t, s in enumerate(mu.samples):
        c = model.cost_matrix(s.points, state, s.space.index)
        out.append(c[np.arange(len(s.points)), labels_per_type[t]])
    return out


def _sizes_of(mu, labels_per_type, n):
    sizes = np.zeros(n)
    for t, s in enumerate(mu.samples):
        for i in range(n):
            sizes[i] += float(np.sum(s.weights[labels_per_type[t] == i]))
    return sizes


def _compare(old_costs, new_costs, tol):
    """Pareto comparison pointwise over samples."""
    worse = 0.0
    best_gain = 0.0
    for old, new in zip(old_costs, new_costs):
        diff = new - old
        worse = max(worse, float(np.max(diff)))
        best_gain = min(best_gain, float(np.min(diff)))
    return worse <= 1e-12 and best_gain < -tol, worse, -best_gain


def pareto_probe(model: CostModel, mu: SampledMeasure, eq, trials: int,
                 seed: int, tolerance: float = 1e-6,
                 alternatives: Sequence = ()) -> ParetoProbeResult:
    """Randomized falsifier for conditional Pareto optimality.

    Requires a separable model (with cross-community or endogenous-state
    cost coupling the optimality claim fails by construction and the probe
    refuses to run). Samples (a) perturbed size vectors with cost-minimizing
    reassignment and (b) border-band reallocations, always keeping the same
    set of active communities; explicit alternative size vectors can be
    supplied and are screened for that same active set. Every counterexample
    is replayed before being reported.
    """
    if not model.separable:
        raise NonSeparableModelError(
            "the conditional optimality claim needs a separable cost "
            "(distance plus own-size terms); refusing to probe this model")
    n = model.n
    base_labels = eq.partition.labels
    base_sizes = eq.partition.realized_sizes
    active = base_sizes > 0
    base_costs = _allocation_costs(model, mu, base_labels, base_sizes)
    statuses = []

    def evaluate_sizes(sizes, origin):
        sizes = np.asarray(sizes, dtype=float)
        state = NominalState(m=sizes / np.sum(sizes), epsilon=1e-12)
        part = assign(model, mu, state)
        realized = part.realized_sizes
        if not np.array_equal(realized > 0, active):
            statuses.append({"origin": origin, "status": "different-active-set",
                             "detail": "alternative changes which communities "
                                       "are non-empty; outside the probe scope"})
            return None
        new_costs = _allocation_costs(model, mu, part.labels, realized)
        improves, worse, gain = _compare(base_costs, new_costs, tolerance)
        if improves:
            return {"origin": origin, "sizes": [float(v) for v in sizes],
                    "max_worse": worse, "best_gain": gain}
        statuses.append({"origin": origin, "status": "no-improvement"})
        return None

    for alt in alternatives:
        hit = evaluate_sizes(np.asarray(alt, dtype=float), "explicit")
        if hit is not None:
            return ParetoProbeResult(status="counterexample", trials_run=0,
                                     counterexample=hit,
                                     alternative_statuses=statuses)

    sample = mu.single() if mu.q == 1 else None
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        if t % 2 == 0 or sample is None:
            # (a) perturbed sizes with cost-minimizing reassignment
            direction = rng.normal(size=n)
            direction -= direction.mean()
            scale = 10.0 ** rng.uniform(-3, -1)
            floor = min(float(np.min(base_sizes[active])) / 4, 1e-3)
            sizes = project_restricted_simplex(base_sizes + scale * direction, floor)
            hit = evaluate_sizes(sizes, f"size-perturbation[{t}]")
            if hit is not None:
                return ParetoProbeResult(status="counterexample", trials_run=t + 1,
                                         counterexample=hit,
                                         alternative_statuses=statuses)
        else:
            # (b) move a random border band between two communities
            i, j = rng.choice(n, size=2, replace=False)
            labels = [lab.copy() for lab in base_labels]
            lab0 = labels[0]
            member_idx = np.nonzero(lab0 == i)[0]
            if len(member_idx) == 0:
                continue
            c = model.cost_matrix(sample.points[member_idx], eq.state, 1)
            band = c[:, j] - c[:, i]
            order = np.argsort(band, kind="stable")
            masses = np.cumsum(sample.weights[member_idx][order])
            target_mass = 10.0 ** rng.uniform(-3, -1)
            count = int(np.searchsorted(masses, target_mass, side="right"))
            if count == 0 or count == len(member_idx):
                continue
            lab0[member_idx[order[:count]]] = j
            sizes = _sizes_of(mu, labels, n)
            if not np.array_equal(sizes > 0, active):
                continue
            new_costs = _allocation_costs(model, mu, labels, sizes)
            improves, worse, gain = _compare(base_costs, new_costs, tolerance)
            if improves:
                # replay from scratch before reporting
                sizes2 = _sizes_of(mu, labels, n)
                new2 = _allocation_costs(model, mu, labels, sizes2)
                improves2, worse2, gain2 = _compare(base_costs, new2, tolerance)
                if improves2:
                    hit = {"origin": f"border-band[{t}]",
                           "moved": int(count), "pair": (int(i) + 1, int(j) + 1),
                           "max_worse": worse2, "best_gain": gain2}
                    return ParetoProbeResult(status="counterexample",
                                             trials_run=t + 1,
                                             counterexample=hit,
                                             alternative_statuses=statuses)
    return ParetoProbeResult(status="no-improvement-found", trials_run=trials,
                             alternative_statuses=statuses)
