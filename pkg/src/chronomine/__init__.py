"""Event time prediction over temporal knowledge graphs.

The pipeline: parse a quadruple dataset and close it under inverses, view it
as an event-centric graph, mine cyclic-walk rule patterns, fit conditional
time-gap densities, train soft rule selection by gradient descent, and predict
interval or timestamp queries scored by interval-overlap metrics.
"""

from .density import (
    DensityComponent,
    DensityTable,
    EraPolicy,
    eval_component,
    fit_component,
    fit_density_table,
    load_density_table,
    save_density_table,
)
from .errors import (
    ChronomineError,
    ConfigError,
    DatasetFormatError,
    DependencyError,
    InsufficientSamplesError,
    UnknownEndpointError,
)
from .eventgraph import (
    EventGraph,
    build_event_graph,
    edge_operator,
    path_to_walk,
    predicate_operator,
)
from .learner import (
    MODE_EVENT,
    MODE_RULE,
    TimeScoringModel,
    TrainConfig,
    TrainResult,
    active_targets,
    artifact_from_training,
    build_grids,
    finite_difference_check,
    load_model,
    prepare_query,
    save_model,
    train,
)
from .metrics import (
    EvalReport,
    aeiou,
    evaluate_dataset,
    format_report,
    mae,
    tac,
    vol,
    write_report_tsv,
)
from .mining import (
    MinerConfig,
    RulePattern,
    extract_rule_patterns,
    ground_patterns,
    pattern_hash,
    query_from_event,
    query_from_triple,
    read_rule_file,
    sample_cyclic_walks,
    write_rule_file,
)
from .pipeline import fallback_statistics, fit_densities, mine_rules
from .predict import (
    Prediction,
    Predictor,
    argmax_timestamp,
    read_predictions,
    restrict_to_past,
    write_predictions,
)
from .synth import (
    HeterogeneousSpec,
    PlantSpec,
    SynthDataset,
    generate_heterogeneous_tkg,
    generate_planted_tkg,
    oracle_bayes_mae,
    read_truth_table,
)
from .tkg import (
    Fact,
    Interval,
    SymbolTable,
    TemporalRelation,
    TimeGrid,
    Tkg,
    add_inverse_facts,
    inverse_predicate,
    parse_quadruple_file,
    quantize,
    serialize_tkg,
    temporal_relation,
)

__all__ = [
    "ChronomineError",
    "ConfigError",
    "DatasetFormatError",
    "DensityComponent",
    "DensityTable",
    "DependencyError",
    "EraPolicy",
    "EvalReport",
    "EventGraph",
    "Fact",
    "HeterogeneousSpec",
    "InsufficientSamplesError",
    "Interval",
    "MODE_EVENT",
    "MODE_RULE",
    "MinerConfig",
    "PlantSpec",
    "Prediction",
    "Predictor",
    "RulePattern",
    "SymbolTable",
    "SynthDataset",
    "TemporalRelation",
    "TimeGrid",
    "TimeScoringModel",
    "Tkg",
    "TrainConfig",
    "TrainResult",
    "UnknownEndpointError",
    "active_targets",
    "add_inverse_facts",
    "aeiou",
    "argmax_timestamp",
    "artifact_from_training",
    "build_event_graph",
    "build_grids",
    "edge_operator",
    "eval_component",
    "evaluate_dataset",
    "extract_rule_patterns",
    "fallback_statistics",
    "finite_difference_check",
    "fit_component",
    "fit_densities",
    "fit_density_table",
    "format_report",
    "generate_heterogeneous_tkg",
    "generate_planted_tkg",
    "ground_patterns",
    "inverse_predicate",
    "load_density_table",
    "load_model",
    "mae",
    "mine_rules",
    "oracle_bayes_mae",
    "parse_quadruple_file",
    "path_to_walk",
    "pattern_hash",
    "predicate_operator",
    "prepare_query",
    "quantize",
    "query_from_event",
    "query_from_triple",
    "read_predictions",
    "read_rule_file",
    "read_truth_table",
    "restrict_to_past",
    "sample_cyclic_walks",
    "save_density_table",
    "save_model",
    "serialize_tkg",
    "tac",
    "temporal_relation",
    "train",
    "vol",
    "write_predictions",
    "write_report_tsv",
    "write_rule_file",
]
