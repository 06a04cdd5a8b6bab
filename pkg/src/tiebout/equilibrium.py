"""Fixed-point solvers and certification for non-empty-community equilibria.

The production path is damped fixed-point iteration on the realized-size map
over an epsilon-restricted simplex, with multistart. Because the sampled
size map is a step function, repelling fixed points cannot be reached by
forward iteration alone; for two communities the solver additionally scans
the size residual along the one-dimensional simplex, brackets its sign
changes and snaps to nearby points of the realized-size lattice, which
recovers unstable fixed points to machine residual. A simplicial labeling
oracle (Sperner / set-covering style) certifies the fixed-point set on
coarse problems, mirroring the set-intersection existence argument.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .costs import CostModel, max_attainable_cost, small_group_floor
from .errors import (Assumption2UnverifiedError, AssumptionViolatedError,
                     ConfigError, CyclingDetectedError, EmptyCommunityMeanError,
                     EmptyFeasibleSetError, NoConvergenceError,
                     NoFullyLabeledCellError)
from .measure import SampledMeasure
from .partition import (CharacteristicsSpec, NominalState, Partition, assign,
                        joint_map, size_map)


# ---------------------------------------------------------------------------
# Configuration and reports.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    epsilon0: float = 0.05
    epsilon_min: float = 0.01
    anneal_factor: float = 0.5
    damping: float = 0.5
    tolerance: float = 1e-6
    max_iterations: int = 400
    multistart: int = 12
    seed: int = 0
    scan_points: int = 257
    inner_tolerance: float = 1e-10
    max_provider_sweeps: int = 300
    probe_grid: int = 201
    trace: bool = False
    workers: int = 1

    def __post_init__(self):
        if not (0.0 < self.epsilon_min <= self.epsilon0):
            raise ConfigError("need 0 < epsilon_min <= epsilon0")
        if not (0.0 < self.damping <= 1.0):
            raise ConfigError("damping must lie in (0, 1]")
        if self.tolerance <= 0:
            raise ConfigError("tolerance must be positive")
        if self.multistart < 1:
            raise ConfigError("multistart must be at least 1")

    def check_simplex(self, n: int) -> None:
        if n > 1 and self.epsilon0 >= 1.0 / n:
            raise ConfigError("epsilon0 must be below 1/n")


@dataclass
class ResidualRecord:
    size_residual: float
    characteristic_residual: float
    agent_max_regret: float
    provider_max_regret: float

    def within(self, tol: float) -> bool:
        return max(self.size_residual, self.characteristic_residual,
                   self.agent_max_regret, self.provider_max_regret) <= tol

    def to_dict(self) -> dict:
        return {"size_residual": self.size_residual,
                "characteristic_residual": self.characteristic_residual,
                "agent_max_regret": self.agent_max_regret,
                "provider_max_regret": self.provider_max_regret}


@dataclass
class EquilibriumReport:
    state: NominalState
    partition: Partition
    residuals: ResidualRecord
    all_nonempty: bool
    iterations: int
    start_index: int
    stability: Optional[object] = None
    welfare: Optional[object] = None
    trace: Optional[list] = None


@dataclass(frozen=True)
class ProviderSpec:
    """One community's provider: a quasi-concave utility over its parameter box.

    ``utility`` is called as utility(m, v, z) with realized sizes and
    characteristics and the full parameter vector (the candidate block
    substituted in); providers take the realized aggregates as given.
    """

    utility: Callable
    box_lo: np.ndarray
    box_hi: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "box_lo", np.atleast_1d(np.asarray(self.box_lo, float)))
        object.__setattr__(self, "box_hi", np.atleast_1d(np.asarray(self.box_hi, float)))
        object.__setattr__(self, "initial", np.atleast_1d(np.asarray(self.initial, float)))


# ---------------------------------------------------------------------------
# Simplex utilities.
# ---------------------------------------------------------------------------

def project_restricted_simplex(y: np.ndarray, eps: float) -> np.ndarray:
    """Euclidean projection onto {m : m_i >= eps, sum m_i = 1}."""
    n = len(y)
    if n * eps > 1.0 + 1e-15:
        raise ConfigError("epsilon floor leaves the restricted simplex empty")
    budget = 1.0 - n * eps
    u = y - eps
    if budget <= 0:
        return np.full(n, 1.0 / n)
    s = np.sort(u)[::-1]
    cumulative = np.cumsum(s)
    rho = -1
    for k in range(n):
        theta = (cumulative[k] - budget) / (k + 1)
        if s[k] > theta:
            rho = k
    theta = (cumulative[rho] - budget) / (rho + 1)
    projected = np.maximum(u - theta, 0.0)
    return projected + eps


def _default_starts(n: int, count: int, seed: int):
    starts = [np.full(n, 1.0 / n)]
    pull = 0.1
    for i in range(n):
        vertex = np.full(n, pull / n)
        vertex[i] += 1.0 - pull
        starts.append(vertex)
    rng = np.random.default_rng(seed)
    while len(starts) < count:
        starts.append(rng.dirichlet(np.ones(n)))
    return starts[:max(count, 1)]


# ---------------------------------------------------------------------------
# Basic-model solver.
# ---------------------------------------------------------------------------

def _damped_run(size_fn, m0, config, n):
    """Damped projected iteration with an annealed epsilon floor.

    The damping halves whenever the residual grows (the size map can
    overshoot near steep borders) and resets at each annealing stage.
    """
    schedule = []
    eps = config.epsilon0
    while eps > config.epsilon_min * (1 + 1e-12):
        schedule.append(eps)
        eps = max(eps * config.anneal_factor, config.epsilon_min)
    schedule.append(config.epsilon_min)
    per_stage = max(20, config.max_iterations // len(schedule))
    m = project_restricted_simplex(np.asarray(m0, float), schedule[0])
    iterations = 0
    trace = [] if config.trace else None
    for eps in schedule:
        alpha = config.damping
        prev = np.inf
        m = project_restricted_simplex(m, eps)
        for _ in range(per_stage):
            f = size_fn(m)
            residual = float(np.max(np.abs(f - m)))
            iterations += 1
            if trace is not None:
                trace.append((iterations, residual))
            if residual <= config.tolerance:
                if eps <= config.epsilon_min * (1 + 1e-12):
                    return m, iterations, True, trace
                break  # converged at this floor; anneal on
            if residual > prev * (1 + 1e-12):
                alpha = max(alpha / 2, 1.0 / 64)
            prev = residual
            m_next = project_restricted_simplex((1 - alpha) * m + alpha * f, eps)
            if float(np.max(np.abs(m_next - m))) <= 1e-14:
                break  # pinned against the floor; the residual cannot move
            m = m_next
    # final snap: the realized sizes themselves often are the fixed point
    f = size_fn(m)
    candidate = f
    if float(np.min(candidate)) >= config.epsilon_min:
        f2 = size_fn(candidate)
        if float(np.max(np.abs(f2 - candidate))) <= config.tolerance:
            return candidate, iterations + 2, True, trace
    return m, iterations, False, trace


def _scan_candidates(size_fn, config, max_weight):
    """Two-community path: bracket sign changes of the size residual along
    the simplex segment and snap to the realized-size lattice around each."""
    eps = config.epsilon_min
    tol = config.tolerance
    grid = np.linspace(eps, 1.0 - eps, max(config.scan_points, 17))
    residuals = []
    for m1 in grid:
        f = size_fn(np.array([m1, 1.0 - m1]))
        residuals.append(f[0] - m1)
    residuals = np.asarray(residuals)
    candidates = []
    for idx, m1 in enumerate(grid):
        if abs(residuals[idx]) <= tol:
            candidates.append(np.array([m1, 1.0 - m1]))
    window = 10 * max(max_weight, tol)
    probes_per_bracket = 301
    for idx in range(len(grid) - 1):
        if (residuals[idx] >= 0) == (residuals[idx + 1] >= 0):
            continue
        lo, hi = grid[idx], grid[idx + 1]
        sign_lo = residuals[idx] >= 0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            h = size_fn(np.array([mid, 1.0 - mid]))[0] - mid
            if (h >= 0) == sign_lo:
                lo = mid
            else:
                hi = mid
        crossing = 0.5 * (lo + hi)
        seen = set()
        for offset in np.linspace(-window, window, probes_per_bracket):
            m1 = min(max(crossing + offset, eps), 1.0 - eps)
            image = size_fn(np.array([m1, 1.0 - m1]))
            key = round(float(image[0]), 15)
            if key in seen:
                continue
            seen.add(key)
            if image[0] < eps or image[0] > 1.0 - eps:
                continue
            back = size_fn(image)
            if float(np.max(np.abs(back - image))) <= tol:
                candidates.append(image.copy())
    return candidates


def verify_equilibrium(model: CostModel, mu: SampledMeasure, state: NominalState,
                       tolerance: float,
                       charspec: Optional[CharacteristicsSpec] = None,
                       providers: Optional[Sequence[ProviderSpec]] = None,
                       probe_grid: int = 201) -> ResidualRecord:
    """Residual record for a candidate state.

    Agent regret is evaluated at the realized aggregates: the maximum over
    samples of the assigned cost minus the best available cost once sizes
    (and characteristics) are set to what the partition actually delivers.
    Provider regret probes each utility on a grid over its feasible box
    rather than trusting the inner optimizer.
    """
    part = assign(model, mu, state, charspec)
    f = part.realized_sizes
    size_residual = float(np.max(np.abs(f - state.m)))
    char_residual = 0.0
    realized_state = state.with_m(np.maximum(f, 1e-12))
    if charspec is not None:
        fv = part.realized_characteristics
        char_residual = float(np.max(np.abs(fv - state.v))) if len(fv) else 0.0
        realized_state = realized_state.with_v(np.clip(fv, 0.0, 1.0) if len(fv) else state.v)
    regret = 0.0
    for s in mu.samples:
        c = model.cost_matrix(s.points, realized_state, s.space.index)
        labels = part.labels[s.space.index - 1]
        gap = c[np.arange(len(c)), labels] - np.min(c, axis=1)
        if len(gap):
            regret = max(regret, float(np.max(gap)))
    provider_regret = 0.0
    if providers:
        provider_regret = _provider_regret(model, providers, realized_state, probe_grid)
    return ResidualRecord(size_residual=size_residual,
                          characteristic_residual=char_residual,
                          agent_max_regret=regret,
                          provider_max_regret=provider_regret)


def _provider_regret(model, providers, state, probe_grid):
    worst = 0.0
    for i, spec in enumerate(providers):
        block = model.z_layout.block(i)
        current = float(spec.utility(state.m, state.v, state.z))
        lo, hi = spec.box_lo, spec.box_hi
        axes = [np.linspace(lo[d], hi[d], probe_grid) for d in range(len(lo))]
        best = current
        for combo in itertools.product(*axes):
            z = state.z.copy()
            z[block] = combo
            best = max(best, float(spec.utility(state.m, state.v, z)))
        worst = max(worst, max(0.0, best - current))
    return worst


def _certify(model, mu, state, config, start_index, iterations, trace=None,
             charspec=None, providers=None):
    part = assign(model, mu, state, charspec)
    residuals = verify_equilibrium(model, mu, state, config.tolerance, charspec,
                                   providers, config.probe_grid)
    all_nonempty = bool(np.all(state.m >= config.epsilon_min - 1e-15)
                        and np.all(part.realized_sizes > 0))
    return EquilibriumReport(state=state, partition=part, residuals=residuals,
                             all_nonempty=all_nonempty, iterations=iterations,
                             start_index=start_index, trace=trace)


def _merge_reports(reports, config, max_weight, key=lambda r: r.state.m):
    """Collapse states closer than the measure can resolve; keep, per cluster,
    the smallest-residual representative (ties to the lowest start index)."""
    radius = max(10 * config.tolerance, 3 * max_weight)
    kept = []
    order = sorted(reports, key=lambda r: (round(r.residuals.size_residual, 15),
                                           r.start_index))
    for rep in order:
        if any(np.max(np.abs(key(rep) - key(other))) <= radius for other in kept):
            continue
        kept.append(rep)
    kept.sort(key=lambda r: r.start_index)
    return kept


def solve_basic(model: CostModel, mu: SampledMeasure, config: SolverConfig,
                allow_empty: bool = False) -> list:
    """All certified fixed points of the realized-size map found by the
    multistart iteration plus (for two communities) the residual scan.

    Raises when the model fails the small-group divergence check or when no
    start certifies. Reported equilibria satisfy the size-residual and agent
    regret gates at the solver tolerance and keep every community at or
    above the final epsilon floor (pass ``allow_empty`` to keep boundary
    states for study instead of filtering them).
    """
    n = model.n
    config.check_simplex(n)
    if model.depends_on_characteristics or model.depends_on_provider_params:
        raise ConfigError("basic solver requires a model without characteristic "
                          "or provider dependence; use solve_extended")
    try:
        bound = 2.0 * max_attainable_cost(model, mu, seed=config.seed)
        small_group_floor(model, mu, bound)
    except AssumptionViolatedError as err:
        raise Assumption2UnverifiedError(
            "small-group divergence could not be verified: " + str(err)) from err

    def size_fn(m):
        state = NominalState(m=m / np.sum(m), epsilon=config.epsilon_min)
        return size_map(model, mu, state)

    max_weight = mu.max_weight
    raw = []
    start_index = 0

    if n == 1:
        state = NominalState(m=np.array([1.0]), epsilon=min(config.epsilon_min, 0.5))
        raw.append(_certify(model, mu, state, config, 0, 1))
        return raw

    starts = _default_starts(n, config.multistart, config.seed)

    def run_one(args):
        idx, m0 = args
        m, iters, ok, trace = _damped_run(size_fn, m0, config, n)
        return idx, m, iters, ok, trace

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run_one, enumerate(starts)))
    else:
        results = [run_one(item) for item in enumerate(starts)]
    for idx, m, iters, ok, trace in results:
        if not ok:
            continue
        state = NominalState(m=m / np.sum(m), epsilon=config.epsilon_min)
        raw.append(_certify(model, mu, state, config, idx, iters, trace))
    start_index = len(starts)

    if n == 2:
        for m in _scan_candidates(size_fn, config, max_weight):
            state = NominalState(m=m / np.sum(m), epsilon=config.epsilon_min)
            raw.append(_certify(model, mu, state, config, start_index, 0))
            start_index += 1

    certified = [r for r in raw
                 if r.residuals.size_residual <= config.tolerance
                 and r.residuals.agent_max_regret <= config.tolerance]
    if not allow_empty:
        certified = [r for r in certified if r.all_nonempty]
    merged = _merge_reports(certified, config, max_weight)
    if not merged:
        raise NoConvergenceError("no start produced a certified equilibrium",
                                 starts=len(starts))
    return merged


# ---------------------------------------------------------------------------
# Simplicial labeling oracle.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledCell:
    base: tuple
    vertices: np.ndarray  # (n, n) nominal size vectors
    labels: tuple
    barycenter: np.ndarray
    touches_boundary: bool


@dataclass(frozen=True)
class KKMResult:
    cells: tuple
    depth: int
    epsilon: float

    @property
    def boundary_only(self) -> bool:
        return all(c.touches_boundary for c in self.cells)


def kkm_oracle(model: CostModel, mu: SampledMeasure, epsilon: float,
               grid_depth: int) -> KKMResult:
    """Fully-labeled cells of a simplicial subdivision of the restricted simplex.

    Each vertex is labeled with the lowest community whose realized size is
    at least its nominal size (such a community always exists because both
    vectors sum to one). A cell carrying all n labels brackets a common
    point of the covering sets {f_i >= m_i}, i.e. an approximate non-empty
    equilibrium. Combinatorial in n; intended for n <= 4 at desk scale.
    """
    n = model.n
    if n < 2 or n > 4:
        raise ConfigError("the labeling oracle supports 2 to 4 communities")
    if grid_depth < 2:
        raise ConfigError("grid_depth must be at least 2")
    if not (0 < epsilon < 1.0 / n):
        raise ConfigError("epsilon must lie in (0, 1/n)")
    span = 1.0 - n * epsilon
    label_cache = {}

    def vertex_m(k):
        return epsilon + span * np.asarray(k, dtype=float) / grid_depth

    def label_of(k):
        if k in label_cache:
            return label_cache[k]
        m = vertex_m(k)
        state = NominalState(m=m / np.sum(m), epsilon=epsilon)
        f = size_map(model, mu, state)
        candidates = np.nonzero(f >= m - 1e-15)[0]
        lab = int(candidates[0])
        label_cache[k] = lab
        return lab

    p = n - 1
    cells = []
    perms = list(itertools.permutations(range(p)))
    ranges = [range(grid_depth) for _ in range(p)]
    for base in itertools.product(*ranges):
        if sum(base) > grid_depth - 1:
            continue
        for perm in perms:
            chain = [tuple(base)]
            valid = True
            for axis in perm:
                nxt = list(chain[-1])
                nxt[axis] += 1
                if sum(nxt) > grid_depth:
                    valid = False
                    break
                chain.append(tuple(nxt))
            if not valid:
                continue
            full = [tuple(list(y) + [grid_depth - sum(y)]) for y in chain]
            labels = tuple(label_of(k) for k in full)
            if set(labels) != set(range(n)):
                continue
            vertices = np.array([vertex_m(k) for k in full])
            cells.append(LabeledCell(
                base=tuple(base), vertices=vertices, labels=labels,
                barycenter=np.mean(vertices, axis=0),
                touches_boundary=bool(any(0 in k for k in full))))
    if not cells:
        raise NoFullyLabeledCellError(
            "no fully-labeled cell found; the model may violate the standing "
            "assumptions or the depth is too coarse", depth=grid_depth)
    return KKMResult(cells=tuple(cells), depth=grid_depth, epsilon=epsilon)


# ---------------------------------------------------------------------------
# Providers and the extended solver.
# ---------------------------------------------------------------------------

def golden_section_max(fn: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-10, max_iter: int = 200) -> float:
    """Maximizer of a quasi-concave function on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    if b <= a:
        return a
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def provider_best_response(model: CostModel, utility: Callable, i: int,
                           state: NominalState, box, inner_tol: float = 1e-10,
                           max_cycles: int = 60) -> np.ndarray:
    """Coordinate-wise golden-section ascent of one provider's utility.

    Valid for quasi-concave utilities on a box; cycles through coordinates
    until a full pass improves by less than ``inner_tol``. The realized
    sizes and characteristics in ``state`` are held fixed.
    """
    lo = np.atleast_1d(np.asarray(box[0], dtype=float))
    hi = np.atleast_1d(np.asarray(box[1], dtype=float))
    if len(lo) != len(hi) or np.any(hi < lo):
        raise EmptyFeasibleSetError("feasible box is empty or malformed",
                                    community=i + 1)
    block = model.z_layout.block(i)
    z = state.z.copy()
    z_i = np.clip(z[block], lo, hi)

    def value(candidate):
        zz = z.copy()
        zz[block] = candidate
        return float(utility(state.m, state.v, zz))

    best = value(z_i)
    for _ in range(max_cycles):
        improved = 0.0
        for d in range(len(z_i)):
            def along(t, d=d):
                cand = z_i.copy()
                cand[d] = t
                return value(cand)
            t_star = golden_section_max(along, lo[d], hi[d], tol=inner_tol)
            cand = z_i.copy()
            cand[d] = t_star
            val = value(cand)
            if val > best:
                improved += val - best
                best = val
                z_i = cand
        if improved < inner_tol:
            break
    return z_i


def _inner_fixed_point(model, mu, charspec, z, m0, v0, config, anneal):
    """Damped fixed point on (sizes, characteristics) at fixed provider
    parameters. Communities that empty out keep their previous
    characteristics block (nothing to average over)."""
    n = model.n
    layout = model.v_layout
    schedule = []
    eps = config.epsilon0 if anneal else config.epsilon_min
    while eps > config.epsilon_min * (1 + 1e-12):
        schedule.append(eps)
        eps = max(eps * config.anneal_factor, config.epsilon_min)
    schedule.append(config.epsilon_min)
    per_stage = max(20, config.max_iterations // len(schedule))
    m = project_restricted_simplex(np.asarray(m0, float), schedule[0])
    v = np.asarray(v0, float).copy()
    iterations = 0
    for eps in schedule:
        alpha = config.damping
        prev = np.inf
        m = project_restricted_simplex(m, eps)
        for _ in range(per_stage):
            state = NominalState(m=m, v=v, z=z, epsilon=eps)
            try:
                f, fv = joint_map(model, mu, state, charspec)
            except EmptyCommunityMeanError:
                f = size_map(model, mu, state)
                fv = v
            residual = max(float(np.max(np.abs(f - m))),
                           float(np.max(np.abs(fv - v))) if len(v) else 0.0)
            iterations += 1
            if residual <= config.tolerance and eps <= config.epsilon_min * (1 + 1e-12):
                return m, v, iterations, True
            if residual > prev * (1 + 1e-12):
                alpha = max(alpha / 2, 1.0 / 64)
            prev = residual
            m = project_restricted_simplex((1 - alpha) * m + alpha * f, eps)
            if len(v):
                v = np.clip((1 - alpha) * v + alpha * fv, 0.0, 1.0)
    # snap attempt as in the basic path
    state = NominalState(m=m, v=v, z=z, epsilon=config.epsilon_min)
    try:
        f, fv = joint_map(model, mu, state, charspec)
        if float(np.min(f)) >= config.epsilon_min:
            state2 = NominalState(m=f, v=np.clip(fv, 0, 1) if len(v) else v, z=z,
                                  epsilon=config.epsilon_min)
            f2, fv2 = joint_map(model, mu, state2, charspec)
            res = max(float(np.max(np.abs(f2 - state2.m))),
                      float(np.max(np.abs(fv2 - state2.v))) if len(v) else 0.0)
            if res <= config.tolerance:
                return state2.m, state2.v, iterations + 2, True
    except EmptyCommunityMeanError:
        pass
    return m, v, iterations, False


def solve_extended(model: CostModel, charspec: Optional[CharacteristicsSpec],
                   providers: Sequence[ProviderSpec], mu: SampledMeasure,
                   config: SolverConfig, allow_empty: bool = False) -> list:
    """Joint agent/characteristics/provider equilibria by nested iteration.

    Inner loop: damped fixed point on (sizes, characteristics) at fixed
    provider parameters. Outer loop: a Gauss-Seidel sweep of provider best
    responses against the realized aggregates. Convergence requires the
    joint residual (sizes, characteristics, provider regret by grid probe)
    to clear the solver tolerance; revisiting an earlier outer state without
    converging raises a cycling error carrying the cycle.
    """
    n = model.n
    config.check_simplex(n)
    if len(providers) != n:
        raise ConfigError("need exactly one provider spec per community")
    if charspec is not None and charspec.layout().sizes != model.v_layout.sizes \
            and model.v_layout.total > 0:
        raise ConfigError("characteristics layout does not match the model's")

    z0 = np.concatenate([np.clip(p.initial, p.box_lo, p.box_hi) for p in providers]) \
        if model.z_layout.total else np.zeros(0)
    v_total = charspec.layout().total if charspec is not None else 0

    if n == 1:
        starts = [np.array([1.0])]
    else:
        starts = _default_starts(n, max(1, min(config.multistart, 8)), config.seed)

    reports = []
    for idx, m0 in enumerate(starts):
        try:
            report = _extended_run(model, charspec, providers, mu, config,
                                   np.asarray(m0, float), z0.copy(), v_total, idx)
        except NoConvergenceError:
            continue
        if report is not None:
            reports.append(report)

    certified = [r for r in reports if r.residuals.within(config.tolerance)]
    if not allow_empty:
        certified = [r for r in certified if r.all_nonempty]
    merged = _merge_reports(certified, config, mu.max_weight,
                            key=lambda r: np.concatenate([r.state.m, r.state.z]))
    if not merged:
        raise NoConvergenceError("no start produced a certified equilibrium",
                                 starts=len(starts))
    return merged


def _extended_run(model, charspec, providers, mu, config, m0, z, v_total, start_index):
    m = m0
    v = np.full(v_total, 0.5)
    history = []
    total_iterations = 0
    for sweep in range(config.max_provider_sweeps):
        anneal = sweep == 0
        m, v, iters, ok = _inner_fixed_point(model, mu, charspec, z, m, v, config, anneal)
        total_iterations += iters
        if not ok:
            raise NoConvergenceError("inner fixed point did not converge",
                                     sweep=sweep, start_index=start_index)
        state = NominalState(m=m, v=v, z=z, epsilon=config.epsilon_min)
        part = assign(model, mu, state, charspec)
        realized = state.with_m(np.maximum(part.realized_sizes, 1e-12))
        if charspec is not None and len(part.realized_characteristics):
            realized = realized.with_v(np.clip(part.realized_characteristics, 0, 1))
        delta_z = 0.0
        z_new = z.copy()
        for i, spec in enumerate(providers):
            block = model.z_layout.block(i)
            best = provider_best_response(
                model, spec.utility, i,
                NominalState(m=realized.m, v=realized.v, z=z_new,
                             epsilon=config.epsilon_min),
                (spec.box_lo, spec.box_hi), inner_tol=config.inner_tolerance)
            delta_z = max(delta_z, float(np.max(np.abs(best - z_new[block])))
                          if len(best) else 0.0)
            z_new[block] = best
        z = z_new
        if delta_z <= max(config.inner_tolerance * 10, config.tolerance / 10):
            state = NominalState(m=m, v=v, z=z, epsilon=config.epsilon_min)
            report = _certify(model, mu, state, config, start_index,
                              total_iterations, charspec=charspec,
                              providers=providers)
            return report
        scale = max(config.tolerance / 100, 1e-14)
        key = tuple(np.round(np.concatenate([m, v, z]) / scale).astype(np.int64))
        if key in history:
            first = history.index(key)
            raise CyclingDetectedError(
                "outer provider loop revisited an earlier state without converging",
                cycle=history[first:] + [key], sweep=sweep)
        history.append(key)
    raise NoConvergenceError("provider sweeps exhausted without convergence",
                             start_index=start_index)
