"""Solver and analyzer for sorting equilibria in continuum local-public-good
economies: weighted-sample measures, composable cost models, cost-minimizing
partitions, fixed-point and simplicial equilibrium search, group-deviation
stability analysis, welfare probes and comparative-statics sweeps."""

from .costs import (BlockLayout, CostModel, CharacteristicTasteTerm, ConstantTerm,
                    CrossSizeTerm, CustomTerm, EntryFeeTerm, FixedShareTerm,
                    MetricTerm, dcost_dm, eval_cost, grad_x_cost,
                    indifference_gap_measure, max_attainable_cost,
                    metric_fixed_share, small_group_floor)
from .equilibrium import (EquilibriumReport, KKMResult, ProviderSpec,
                          ResidualRecord, SolverConfig, golden_section_max,
                          kkm_oracle, provider_best_response, solve_basic,
                          solve_extended, verify_equilibrium)
from .measure import (SampledMeasure, TypeSpace, UniformDensity,
                      PiecewiseConstantDensity, TabulatedDensity,
                      build_grid_measure, build_monte_carlo_measure,
                      disk_predicate, measure_of, merge_measures)
from .partition import (BorderPolyline, CharacteristicItem, CharacteristicsSpec,
                        NominalState, Partition, assign, extract_border,
                        indifference_locus, joint_map, realized_characteristics,
                        size_map)
from .stability import (DeviationCandidate, StabilitySettings, StabilityVerdict,
                        classify_stability, strong_stability_condition,
                        strong_stability_search, verify_deviation,
                        weak_stability_search)
from .sweep import SweepPlan, comparative_statics, weak_stability_regression
from .welfare import WelfareSummary, aggregate_welfare, pareto_probe

__version__ = "0.1.0"
