"""Comparative statics along one-parameter cost-model families.

Traces equilibria and their stability classification while a single scalar
(the distance scale or the shared fixed cost) moves along a monotone value
list. Equilibria are matched into branches between adjacent rows by nearest
state; classification flips are located by the sign change of the border
certificate between rows and refined by bisection in the parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .costs import CostModel, FixedShareTerm, MetricTerm
from .errors import ConfigError, TieboutError
from .equilibrium import SolverConfig, solve_basic
from .measure import SampledMeasure
from .stability import (StabilitySettings, strong_stability_condition,
                        strong_stability_search, weak_stability_search)

_BRANCH_MATCH_RADIUS = 0.1


@dataclass(frozen=True)
class ModelFamily:
    """A cost model with one scalar swept: 'g' (shared fixed cost) or
    'scale' (distance cost scale)."""

    base: CostModel
    parameter: str

    def __post_init__(self):
        if self.parameter not in ("g", "scale"):
            raise ConfigError("swept parameter must be 'g' or 'scale'")

    def build(self, value: float) -> CostModel:
        value = float(value)
        terms = []
        hit = False
        for t in self.base.terms:
            if self.parameter == "g" and isinstance(t, FixedShareTerm):
                terms.append(FixedShareTerm(g=np.full_like(t.g, value)))
                hit = True
            elif self.parameter == "scale" and isinstance(t, MetricTerm):
                terms.append(replace(t, scale=value))
                hit = True
            else:
                terms.append(t)
        if not hit:
            raise ConfigError(f"model has no term carrying parameter "
                              f"{self.parameter!r}")
        return replace(self.base, terms=tuple(terms))

    def validate_value(self, value: float) -> Optional[str]:
        if self.parameter == "scale" and value == 0.0:
            return ("zero distance scale violates the border gradient-gap "
                    "regularity; skipped")
        if value < 0.0:
            return "negative parameter value; skipped"
        return None


@dataclass(frozen=True)
class SweepPlan:
    parameter: str
    values: tuple
    warm_start: str = "continue"  # or "fresh-multistart"
    stability: StabilitySettings = field(default_factory=StabilitySettings)
    refine_flips: bool = True
    run_strong_search: bool = False

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        diffs = np.diff(vals)
        if len(vals) >= 2 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError("sweep values must be strictly monotone")
        if self.warm_start not in ("continue", "fresh-multistart"):
            raise ConfigError("warm_start must be 'continue' or 'fresh-multistart'")


@dataclass
class SweepRow:
    value: float
    status: str  # "ok" | "skipped: ..." | "failed: ..."
    branch_id: Optional[int] = None
    equilibrium: Optional[object] = None
    conditions: list = field(default_factory=list)
    classification: Optional[str] = None

    def condition_sum(self, pair) -> Optional[float]:
        for c in self.conditions:
            if (c.i, c.j) == pair:
                return c.condition_sum
        return None


@dataclass
class FlipRecord:
    branch_id: int
    pair: tuple
    value_before: float
    value_after: float
    anchor_m: Optional[np.ndarray] = None
    refined_value: Optional[float] = None

    def to_dict(self) -> dict:
        return {"branch_id": self.branch_id,
                "pair": (self.pair[0] + 1, self.pair[1] + 1),
                "value_before": self.value_before,
                "value_after": self.value_after,
                "refined_value": self.refined_value}


@dataclass
class SweepTable:
    plan: SweepPlan
    rows: list
    flips: list
    branch_births: list = field(default_factory=list)
    branch_deaths: list = field(default_factory=list)


def _conditions_for(model, mu, eq, settings):
    out = []
    for i in range(model.n):
        for j in range(model.n):
            if i == j:
                continue
            try:
                out.append(strong_stability_condition(model, mu, eq, i, j,
                                                      settings.border_grid))
            except TieboutError:
                continue
    return out


def _row_classification(conditions, strong_found):
    if conditions and all(c.satisfied for c in conditions) and not strong_found:
        return "strongly-stable"
    return "weakly-stable-only"


def _solve_at(family, mu, value, solver_config, warm_states):
    model = family.build(value)
    reports = solve_basic(model, mu, solver_config)
    if warm_states:
        # keep branch continuity: prefer matches to the previous row's states
        reports.sort(key=lambda r: min(
            float(np.max(np.abs(r.state.m - w))) for w in warm_states))
    return model, reports


def comparative_statics(family: ModelFamily, mu: SampledMeasure, plan: SweepPlan,
                        solver_config: SolverConfig) -> SweepTable:
    """Sweep table: one row per (value, equilibrium branch).

    Rows carry the border certificates per ordered pair and a
    condition-based classification ('strongly-stable' when every pair
    certificate holds and, if enabled, the strip search finds nothing).
    Solver failures mark the row failed and the sweep continues. Branch
    births and deaths between rows are reported, not interpolated.
    """
    rows = []
    flips = []
    births = []
    deaths = []
    branch_states = {}  # branch id -> last m
    next_branch = 0
    for value in plan.values:
        why = family.validate_value(value)
        if why is not None:
            rows.append(SweepRow(value=value, status="skipped: " + why))
            continue
        warm = list(branch_states.values()) if plan.warm_start == "continue" else []
        try:
            model, reports = _solve_at(family, mu, value, solver_config, warm)
        except TieboutError as err:
            rows.append(SweepRow(value=value, status=f"failed: {err.code}"))
            continue
        assigned = {}
        used_branches = set()
        for eq in reports:
            best = None
            for bid, m_prev in branch_states.items():
                if bid in used_branches:
                    continue
                dist = float(np.max(np.abs(eq.state.m - m_prev)))
                if dist <= _BRANCH_MATCH_RADIUS and (best is None or dist < best[1]):
                    best = (bid, dist)
            if best is None:
                bid = next_branch
                next_branch += 1
                births.append({"branch_id": bid, "value": value,
                               "m": [float(x) for x in eq.state.m]})
            else:
                bid = best[0]
            used_branches.add(bid)
            assigned[bid] = eq
        for bid in list(branch_states.keys()):
            if bid not in used_branches:
                deaths.append({"branch_id": bid, "value": value})
                del branch_states[bid]
        settings = plan.stability
        for bid in sorted(assigned.keys()):
            eq = assigned[bid]
            branch_states[bid] = eq.state.m.copy()
            conditions = _conditions_for(model, mu, eq, settings)
            strong_found = False
            if plan.run_strong_search:
                sr = strong_stability_search(model, mu, eq, settings.eps_mass,
                                             settings.trials, settings.seed,
                                             settings.border_grid)
                strong_found = sr.found
            rows.append(SweepRow(value=value, status="ok", branch_id=bid,
                                 equilibrium=eq, conditions=conditions,
                                 classification=_row_classification(conditions,
                                                                    strong_found)))

    flips = _detect_flips(rows)
    if plan.refine_flips:
        for flip in flips:
            flip.refined_value = _refine_flip(family, mu, plan, solver_config, flip)
    return SweepTable(plan=plan, rows=rows, flips=flips,
                      branch_births=births, branch_deaths=deaths)


def _detect_flips(rows):
    flips = []
    by_branch = {}
    for row in rows:
        if row.status != "ok":
            continue
        by_branch.setdefault(row.branch_id, []).append(row)
    for bid, branch_rows in sorted(by_branch.items()):
        for prev, cur in zip(branch_rows, branch_rows[1:]):
            if prev.classification == cur.classification:
                continue
            pair = None
            for c_prev in prev.conditions:
                c_cur_sum = cur.condition_sum((c_prev.i, c_prev.j))
                if c_cur_sum is None:
                    continue
                if (c_prev.condition_sum < 0) != (c_cur_sum < 0):
                    pair = (c_prev.i, c_prev.j)
                    break
            if pair is None:
                continue
            flips.append(FlipRecord(branch_id=bid, pair=pair,
                                    value_before=prev.value,
                                    value_after=cur.value,
                                    anchor_m=cur.equilibrium.state.m.copy()))
    return flips


def _refine_flip(family, mu, plan, solver_config, flip, steps: int = 24,
                 value_tol: float = 1e-4):
    """Bisection on the parameter for the certificate's sign change."""
    lo, hi = flip.value_before, flip.value_after

    def condition_sum_at(value):
        model = family.build(value)
        reports = solve_basic(model, mu, solver_config)
        eq = min(reports, key=lambda r: float(np.max(np.abs(
            r.state.m - flip.anchor_m))))
        cond = strong_stability_condition(model, mu, eq, flip.pair[0],
                                          flip.pair[1],
                                          plan.stability.border_grid)
        return cond.condition_sum

    try:
        s_lo = condition_sum_at(lo)
    except TieboutError:
        return None
    for _ in range(steps):
        if abs(hi - lo) <= value_tol:
            break
        mid = 0.5 * (lo + hi)
        try:
            s_mid = condition_sum_at(mid)
        except TieboutError:
            return None
        if (s_mid < 0) == (s_lo < 0):
            lo, s_lo = mid, s_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def weak_stability_regression(family: ModelFamily, mu: SampledMeasure,
                              table: SweepTable, eps_ball: float, trials: int,
                              seed: int) -> dict:
    """Run the weak-deviation search at every successful sweep row.

    Returns an assertion record; any counterexample is attached verbatim.
    Rows that were skipped or failed are listed as such.
    """
    checked = 0
    counterexamples = []
    skipped = []
    for row in table.rows:
        if row.status != "ok":
            skipped.append({"value": row.value, "status": row.status})
            continue
        model = family.build(row.value)
        result = weak_stability_search(model, mu, row.equilibrium, eps_ball,
                                       trials, seed,
                                       table.plan.stability.border_grid)
        checked += 1
        if result.found:
            counterexamples.append({"value": row.value,
                                    "branch_id": row.branch_id,
                                    "candidate": result.counterexample.to_dict()})
    return {"rows_checked": checked, "all_weakly_stable": not counterexamples,
            "counterexamples": counterexamples, "skipped": skipped,
            "trials_per_row": trials}
