"""Declarative experiment configuration.

One TOML file describes a full experiment: the population measure, the cost
model term list, endogenous characteristics, providers, solver settings and
the analyses to run. Everything the solver consumes is built here, so runs
are archivable and diffable; command-line flags only steer orchestration.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .costs import (BlockLayout, CharacteristicTasteTerm, ConstantTerm,
                    CostModel, CrossSizeTerm, EntryFeeTerm, FixedShareTerm,
                    MetricTerm, indifference_gap_measure,
                    max_attainable_cost, small_group_floor)
from .equilibrium import ProviderSpec, SolverConfig
from .errors import AssumptionViolatedError, ConfigError
from .measure import (PiecewiseConstantDensity, SampledMeasure, TabulatedDensity,
                      TypeSpace, UniformDensity, build_grid_measure,
                      build_monte_carlo_measure, disk_predicate, merge_measures)
from .partition import CharacteristicItem, CharacteristicsSpec, NominalState
from .stability import StabilitySettings
from .sweep import ModelFamily, SweepPlan


@dataclass
class ExperimentConfig:
    measure: SampledMeasure
    model: CostModel
    charspec: Optional[CharacteristicsSpec]
    providers: list
    solver: SolverConfig
    stability: StabilitySettings
    sweep_plan: Optional[SweepPlan]
    sweep_family: Optional[ModelFamily]
    welfare_trials: int
    welfare_seed: int
    output_dir: str
    figures: bool
    locus_gaps: list
    allow_empty: bool
    raw: dict
    text: str


def load_config(path: str) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    with open(path, "r") as fh:
        text = fh.read()
    return build_experiment(raw, text)


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing key {key!r} in [{where}]")
    return section[key]


def _build_density(spec: dict):
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return UniformDensity()
    if kind == "piecewise":
        boxes = tuple((np.asarray(b["lo"], float), np.asarray(b["hi"], float))
                      for b in spec.get("boxes", []))
        levels = tuple(float(b["level"]) for b in spec.get("boxes", []))
        return PiecewiseConstantDensity(boxes=boxes, levels=levels,
                                        background=float(spec.get("background", 1.0)))
    if kind == "tabulated":
        axes = tuple(np.asarray(a, float) for a in spec["axes"])
        return TabulatedDensity(axes=axes, table=np.asarray(spec["values"], float))
    raise ConfigError(f"unknown density kind {kind!r}")


def _build_predicate(spec: Optional[dict]):
    if spec is None:
        return None
    kind = spec.get("kind")
    if kind == "disk":
        return disk_predicate(spec["center"], float(spec["radius"]))
    raise ConfigError(f"unknown predicate kind {kind!r}")


def _build_measure(section: dict) -> SampledMeasure:
    types = section.get("types")
    if not types:
        raise ConfigError("need at least one [[measure.types]] block")
    parts = []
    for idx, t in enumerate(types, start=1):
        support = _require(t, "support", "measure.types")
        space = TypeSpace(index=int(t.get("index", idx)),
                          lo=np.asarray(support["lo"], float),
                          hi=np.asarray(support["hi"], float),
                          density=_build_density(t.get("density", {})),
                          predicate=_build_predicate(t.get("predicate")),
                          mass_share=float(t.get("mass_share", 1.0)))
        sampling = _require(t, "sampling", "measure.types")
        method = sampling.get("method", "grid")
        if method == "grid":
            parts.append(build_grid_measure(space, int(sampling["cells_per_axis"])))
        elif method == "monte-carlo":
            parts.append(build_monte_carlo_measure(space, int(sampling["n"]),
                                                   int(sampling.get("seed", 0))))
        else:
            raise ConfigError(f"unknown sampling method {method!r}")
    return merge_measures(parts)


def _build_term(spec: dict, n: int, dimension: int):
    kind = _require(spec, "kind", "costs.terms")
    if kind == "metric":
        centers = spec.get("centers")
        if centers == "provider":
            return MetricTerm(centers=None, centers_from_provider=True,
                              scale=float(spec.get("scale", 1.0)),
                              exponent=float(spec.get("exponent", 2.0)))
        return MetricTerm(centers=np.asarray(centers, float),
                          scale=float(spec.get("scale", 1.0)),
                          exponent=float(spec.get("exponent", 2.0)))
    if kind == "fixed_share":
        g = np.broadcast_to(np.asarray(spec["g"], float), (n,)).copy()
        return FixedShareTerm(g=g)
    if kind == "entry_fee":
        return EntryFeeTerm(index=int(spec.get("fee_index", 1)) - 1)
    if kind == "constant":
        return ConstantTerm(values_per_community=np.asarray(spec["values"], float))
    if kind == "taste":
        return CharacteristicTasteTerm(weights=tuple(
            tuple(float(w) for w in row) for row in spec["weights"]))
    if kind == "spillover":
        return CrossSizeTerm(weights=np.asarray(spec["weights"], float))
    raise ConfigError(f"unknown cost term kind {kind!r}")


def _build_characteristics(section: Optional[dict], n: int, dimension: int,
                           q: int) -> Optional[CharacteristicsSpec]:
    if not section:
        return None
    per_community = [[] for _ in range(n)]
    for item in section.get("items", []):
        community = int(_require(item, "community", "characteristics.items")) - 1
        if not (0 <= community < n):
            raise ConfigError("characteristic community index out of range")
        calibration = item.get("calibration", {})
        per_community[community].append(CharacteristicItem(
            kind=_require(item, "kind", "characteristics.items"),
            axis=int(item.get("axis", 1)) - 1,
            type_index=int(item.get("type_index", 1)),
            bandwidth=float(item.get("bandwidth", 0.05)),
            calibration=(float(calibration.get("scale", 1.0)),
                         float(calibration.get("offset", 0.0)))))
    return CharacteristicsSpec(items=tuple(tuple(v) for v in per_community),
                               dimension=dimension, q=q)


def _build_providers(section: Optional[dict], n: int, z_layout: BlockLayout):
    if not section:
        return []
    items = section.get("items", [])
    if len(items) != n:
        raise ConfigError("need exactly one [[providers.items]] block per community")
    specs = [None] * n
    for item in items:
        community = int(_require(item, "community", "providers.items")) - 1
        if not (0 <= community < n):
            raise ConfigError("provider community index out of range")
        box = item.get("box", {})
        initial = np.asarray(_require(item, "initial", "providers.items"), float)
        lo = np.asarray(box.get("lo", np.zeros_like(initial)), float)
        hi = np.asarray(box.get("hi", np.ones_like(initial)), float)
        utility = _build_utility(item.get("utility", {}), community, z_layout)
        specs[community] = ProviderSpec(utility=utility, box_lo=lo, box_hi=hi,
                                        initial=initial)
    return specs


def _build_utility(spec: dict, i: int, z_layout: BlockLayout):
    kind = spec.get("kind", "track_characteristic_block")
    if kind == "track_characteristic_block":
        def tracking(m, v, z, i=i):
            block = z_layout.block(i)
            width = block.stop - block.start
            offset = sum(z_layout.sizes[:i])  # characteristic blocks match z
            vi = v[offset:offset + width]
            return -float(np.sum((z[block] - vi) ** 2))
        return tracking
    if kind == "fee_revenue":
        fee_index = int(spec.get("fee_index", 1)) - 1
        cost_weight = float(spec.get("cost_weight", 1.0))

        def revenue(m, v, z, i=i):
            fee = z[z_layout.block(i)][fee_index]
            return float(fee * m[i] - cost_weight * fee * fee)
        return revenue
    raise ConfigError(f"unknown provider utility kind {kind!r}")


def build_experiment(raw: dict, text: str = "") -> ExperimentConfig:
    mu = _build_measure(_require(raw, "measure", "config"))
    costs = _require(raw, "costs", "config")
    n = int(_require(costs, "communities", "costs"))
    dimension = mu.samples[0].space.dimension
    for s in mu.samples[1:]:
        if s.space.dimension != dimension:
            raise ConfigError("all type spaces must share one dimension "
                              "for the built-in cost terms")

    charspec = _build_characteristics(raw.get("characteristics"), n, dimension,
                                      mu.q)
    v_layout = charspec.layout() if charspec else BlockLayout(sizes=())

    providers_raw = raw.get("providers")
    z_sizes = tuple(len(item["initial"]) for item in
                    providers_raw.get("items", [])) if providers_raw else ()
    if providers_raw and len(z_sizes) != n:
        raise ConfigError("need exactly one [[providers.items]] block per community")
    z_layout = BlockLayout(sizes=z_sizes)

    terms = tuple(_build_term(t, n, dimension)
                  for t in _require(costs, "terms", "costs"))
    model = CostModel(n=n, dimension=dimension, terms=terms,
                      v_layout=v_layout if charspec else BlockLayout(sizes=()),
                      z_layout=z_layout,
                      gradient_mode=costs.get("gradient_mode", "analytic"),
                      h_x=float(costs.get("h_x", 1e-5)),
                      h_m=float(costs.get("h_m", 1e-5)))
    for t in terms:
        if isinstance(t, MetricTerm) and t.centers_from_provider:
            if not providers_raw:
                raise ConfigError("provider-located centers need a [providers] "
                                  "section")
            if any(s != dimension for s in z_sizes):
                raise ConfigError("provider blocks must have one coordinate per "
                                  "space dimension for provider-located centers")

    providers = _build_providers(providers_raw, n, z_layout)

    solver_raw = dict(raw.get("solver", {}))
    allow_empty = bool(solver_raw.pop("allow_empty", False))
    solver = SolverConfig(**solver_raw)

    stability_raw = raw.get("stability", {})
    stability = StabilitySettings(
        eps_ball=float(stability_raw.get("eps_ball", 0.02)),
        eps_mass=float(stability_raw.get("eps_mass", 0.05)),
        trials=int(stability_raw.get("trials", 500)),
        seed=int(stability_raw.get("seed", 0)),
        border_grid=int(stability_raw.get("border_grid", 512)))

    sweep_raw = raw.get("sweep")
    sweep_plan = None
    sweep_family = None
    if sweep_raw:
        sweep_plan = SweepPlan(
            parameter=_require(sweep_raw, "parameter", "sweep"),
            values=tuple(float(v) for v in _require(sweep_raw, "values", "sweep")),
            warm_start=sweep_raw.get("warm_start", "continue"),
            stability=stability,
            refine_flips=bool(sweep_raw.get("refine_flips", True)),
            run_strong_search=bool(sweep_raw.get("run_strong_search", False)))
        sweep_family = ModelFamily(base=model, parameter=sweep_plan.parameter)

    welfare_raw = raw.get("welfare", {})
    output_raw = raw.get("output", {})
    return ExperimentConfig(
        measure=mu, model=model, charspec=charspec, providers=providers,
        solver=solver, stability=stability, sweep_plan=sweep_plan,
        sweep_family=sweep_family,
        welfare_trials=int(welfare_raw.get("pareto_trials", 200)),
        welfare_seed=int(welfare_raw.get("seed", 13)),
        output_dir=str(output_raw.get("directory", "out")),
        figures=bool(output_raw.get("figures", True)),
        locus_gaps=[float(v) for v in output_raw.get("locus_gaps", [])],
        allow_empty=allow_empty, raw=raw, text=text)


# ---------------------------------------------------------------------------
# Validation diagnostics (never runs a solve).
# ---------------------------------------------------------------------------

def _strict_preference_spotcheck(exp: ExperimentConfig, seed: int = 0):
    """Look for positive-measure indifferent sets.

    For separable two-community models the distance-gap distribution is
    scanned for atoms; an atom is a set of agents whose indifference can be
    realized by some admissible fee gap, which pins down an explicit state
    where strict preferences fail. Other models get randomized state probes.
    """
    model, mu = exp.model, exp.measure
    findings = []
    if model.n == 2 and model.separable and mu.q == 1:
        sample = mu.single()
        dist = model.distance_matrix(sample.points,
                                     NominalState(m=np.full(2, 0.5), epsilon=0.01))
        gap = dist[:, 0] - dist[:, 1]
        order = np.argsort(gap, kind="stable")
        sorted_gap = gap[order]
        sorted_w = sample.weights[order]
        # cluster equal gap values (tolerance for float noise)
        start = 0
        for end in range(1, len(sorted_gap) + 1):
            if end == len(sorted_gap) or sorted_gap[end] - sorted_gap[start] > 1e-9:
                mass = float(np.sum(sorted_w[start:end]))
                if mass >= 0.05:
                    value = float(sorted_gap[start])
                    state = _fee_offset_state(model, -value)
                    if state is not None:
                        measured = indifference_gap_measure(model, mu, state,
                                                            0, 1, 1e-3)
                        findings.append({
                            "kind": "strict-preferences-violated",
                            "atom_value": value, "atom_mass": mass,
                            "state_m": [float(x) for x in state.m],
                            "gap_measure_at_state": measured})
                start = end
    else:
        rng = np.random.default_rng(seed)
        eps = min(1e-3, 0.5 / model.n)
        for _ in range(8):
            m = rng.dirichlet(np.ones(model.n))
            m = np.clip(m, eps, None)
            m = m / np.sum(m)
            state = NominalState(m=m, v=np.full(model.v_layout.total, 0.5),
                                 z=np.full(model.z_layout.total, 0.5),
                                 epsilon=eps)
            for i in range(model.n):
                for j in range(i + 1, model.n):
                    val = indifference_gap_measure(model, mu, state, i, j, 1e-3)
                    if val >= 0.05:
                        findings.append({
                            "kind": "strict-preferences-violated",
                            "state_m": [float(x) for x in m],
                            "pair": (i + 1, j + 1),
                            "gap_measure_at_state": val})
    return findings


def _fee_offset_state(model, target_offset, eps=1e-6):
    """For n=2 separable models, a state whose size-cost gap
    c^s_1(m1) - c^s_2(m2) equals ``target_offset`` (bisection; None if the
    model carries no size term)."""
    def offset(m1):
        return model.size_cost(0, m1) - model.size_cost(1, 1.0 - m1)

    lo, hi = eps, 1.0 - eps
    f_lo, f_hi = offset(lo), offset(hi)
    if f_lo == f_hi:
        return None
    if not (min(f_lo, f_hi) <= target_offset <= max(f_lo, f_hi)):
        return None
    decreasing = f_lo > f_hi
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if (offset(mid) > target_offset) == decreasing:
            lo = mid
        else:
            hi = mid
    m1 = 0.5 * (lo + hi)
    return NominalState(m=np.array([m1, 1.0 - m1]), epsilon=min(eps, m1 / 2))


def validate_experiment(exp: ExperimentConfig) -> dict:
    """Assumption spot checks and structural diagnostics; never solves."""
    warnings = []
    info = []
    for finding in _strict_preference_spotcheck(exp):
        warnings.append(finding)
    try:
        bound = 2.0 * max_attainable_cost(exp.model, exp.measure)
        floors = small_group_floor(exp.model, exp.measure, bound)
        info.append({"kind": "small-group-floor", "bound": bound,
                     "floors": [float(f) for f in floors]})
    except AssumptionViolatedError as err:
        warnings.append({"kind": "small-group-divergence-violated",
                         "detail": str(err)})
    if exp.solver.epsilon0 >= 1.0 / exp.model.n and exp.model.n > 1:
        warnings.append({"kind": "epsilon-floor-too-large",
                         "detail": "epsilon0 must be below 1/n"})
    return {"status": "warnings" if warnings else "clean",
            "warnings": warnings, "info": info}
