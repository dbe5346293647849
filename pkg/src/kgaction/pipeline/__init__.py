"""Dataset-facing pipeline: graph assembly, targets, baselines, metrics, experiments."""

from .baselines import eszsl_targets, label_matrix, linear_combination_baseline, nearest_neighbor_baseline
from .data import (
    bank_text,
    features_text,
    read_bank,
    BankSource,
    ClassifierBank,
    FeatureSet,
    bank_from_bytes,
    bank_to_bytes,
    read_bank_text,
    read_features_text,
    write_bank_text,
    write_features_text,
)
from .experiment import (
    ExperimentConfig,
    ExperimentInputs,
    ExperimentResult,
    FitResult,
    assert_zero_shot,
    derive_seed,
    evaluate_weights,
    evaluation_queries,
    fit,
    make_targets,
    manifest_fingerprint,
    run_experiment,
)
from .graphs import AUX_PREFIX, LossConfig, build_kg1, build_kg2, build_kg3, graph_nodes, label_pairs
from .metrics import (
    EvaluationReport,
    MetricKind,
    argmax_labels,
    average_precision,
    mean_average_precision,
    mean_class_accuracy,
    predict,
)

__all__ = [
    "AUX_PREFIX",
    "BankSource",
    "ClassifierBank",
    "EvaluationReport",
    "ExperimentConfig",
    "ExperimentInputs",
    "ExperimentResult",
    "FeatureSet",
    "FitResult",
    "LossConfig",
    "MetricKind",
    "argmax_labels",
    "assert_zero_shot",
    "average_precision",
    "bank_from_bytes",
    "bank_text",
    "features_text",
    "read_bank",
    "bank_to_bytes",
    "build_kg1",
    "build_kg2",
    "build_kg3",
    "derive_seed",
    "eszsl_targets",
    "evaluate_weights",
    "evaluation_queries",
    "fit",
    "graph_nodes",
    "label_matrix",
    "label_pairs",
    "linear_combination_baseline",
    "make_targets",
    "manifest_fingerprint",
    "mean_average_precision",
    "mean_class_accuracy",
    "nearest_neighbor_baseline",
    "predict",
    "read_bank_text",
    "read_features_text",
    "run_experiment",
    "write_bank_text",
    "write_features_text",
]
