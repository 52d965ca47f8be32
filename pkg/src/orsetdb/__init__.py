"""orsetdb: factoring integrity constraints into or-set uncertain relations.

An uncertain relation stores per-cell or-sets of candidate values with
probabilities; constraints shrink its possible-worlds space. This package
computes high-quality approximating sub-relations (single- or multi-row)
via marginal-guided greedy resolution with Monte-Carlo estimation, and
verifies itself against an exact possible-worlds oracle at small scale.
"""

from .constraints import (AggCount, AggExp, AttributeCheck, Constraint, ConstraintSet,
                          ExternalRelation, FD, IND, SetConstraint, TupleCheck,
                          check_attribute, violating_combinations, world_satisfies)
from .dsl import Diagnostic, DslError, parse_constraints, parse_expression, to_dsl
from .errors import (ArityBoundError, AssignmentError, ConfigError, FullyInconsistentError,
                     InfeasibleClassError, NotInSubRelationError, OracleTooLargeError,
                     OrsetError, SchemaError, TupleAnnihilatedError)
from .estimation import (BlockEstimate, MarginalTable, SamplerConfig, block_avg_ratio,
                         exact_tuple_marginals, karp_luby_union_mass,
                         mc_attribute_marginals, mc_tuple_instance_marginals,
                         required_samples, sampled_quality)
from .evaluate import EvalReport, SlotScore, evaluate
from .generator import GeneratedInstance, GeneratorConfig, generate
from .model import (AttributeValue, AttributeWorld, QualityReport, Row, Schema,
                    SubRelation, UncertainRelation, UncertainTuple, WorldAssignment,
                    attribute_world, identity_row, relation, subrelation_total_mass,
                    subrelation_world_probability, world_probability)
from .multirow import ViolationSet, find_violation_sets, resolve_tuple_multi_row, split_row
from .oracle import (OracleReport, WorldTable, build_world_table, enumerate_worlds,
                     exact_all_value_marginals, exact_consistency_report, exact_quality,
                     exact_tuple_instance_marginal, exact_value_marginal)
from .relationfix import (FixPlan, Member, NeedFixClass, class_is_violating, fix_agg_count,
                          fix_agg_exp, fix_class, fix_fd, fix_ind, fix_set,
                          generate_need_fix_classes)
from .selection import (ClassTarget, ResolutionTrace, ResolveConfig, TraceStep, TupleTarget,
                        UtilityRecord, apply_relation_ic, compute_utility, greedy_resolve,
                        incremental_add_ics, incremental_add_tuples, resolve_all)
from .tuplefix import ViolationGraph, build_violation_graph, resolve_tuple_single_row
from .views import RelationView

__version__ = "0.1.0"
