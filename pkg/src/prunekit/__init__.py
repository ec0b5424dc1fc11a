"""Structured filter pruning toolkit.

Scores conv filters by cross-layer similarity (plus weight-norm and
geometric-median baselines), rewrites graphs and weight archives to remove
the lowest-ranked filters, and accounts for the FLOPs/parameter reductions.
"""
from .criteria import (ScoreTable, combine_group_scores, fpgm_score, fscl_score,
                       l1_score, l2_score, score_model)
from .engine import compare_outputs, forward
from .errors import (ConfigError, DimensionError, DomainError, FormatError,
                     PruneKitError, ScoringError, StructuralError, ValidationError)
from .graph import (ChannelUse, ConsumerEntry, ConsumerSlices, Edge, ModelGraph,
                    Node, PruneGroup, prunable_layers, resolve_consumers)
from .metrics import CostReport, ReductionReport, count_costs, reduction_report
from .model_io import (load_archive, load_manifest, save_archive, save_manifest)
from .surgery import LayerPlan, PruningPlan, apply, plan_pruning, select_removals

__version__ = "0.1.0"

__all__ = [
    "ScoreTable", "combine_group_scores", "fpgm_score", "fscl_score",
    "l1_score", "l2_score", "score_model", "compare_outputs", "forward",
    "ConfigError", "DimensionError", "DomainError", "FormatError",
    "PruneKitError", "ScoringError", "StructuralError", "ValidationError",
    "ChannelUse", "ConsumerEntry", "ConsumerSlices", "Edge", "ModelGraph",
    "Node", "PruneGroup", "prunable_layers", "resolve_consumers",
    "CostReport", "ReductionReport", "count_costs", "reduction_report",
    "load_archive", "load_manifest", "save_archive", "save_manifest",
    "LayerPlan", "PruningPlan", "apply", "plan_pruning", "select_removals",
    "__version__",
]
