"""End-to-end experiment: graphs, targets, training, fusion, evaluation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..errors import KgError, ValidationError
from ..gcn import (
    DEFAULT_HIDDEN,
    Branch,
    FusionModel,
    GcnModel,
    TargetSet,
    TrainConfig,
    TrainTarget,
    forward,
    fuse_weighted_sum,
    init_fusion_layer,
    init_model,
    model_to_bytes,
    train,
    train_fusion,
)
from ..graph import GraphMode, KnowledgeGraph, NodeRole, normalize_adjacency
from ..lexicon import EmbeddingTable, Lexicon, SplitManifest
from .baselines import eszsl_targets, label_matrix, linear_combination_baseline, nearest_neighbor_baseline
from .data import ClassifierBank, FeatureSet
from .graphs import LossConfig, build_kg1, build_kg2, build_kg3, sample_supports, strip_aux
from .metrics import EvaluationReport, MetricKind, argmax_labels, mean_average_precision, mean_class_accuracy, predict

KG_NAMES = ("kg1", "kg2verb", "kg2noun", "kg3")
FUSIONS = ("concat", "weighted_sum")
METHODS = ("gcn", "linear_combination", "nearest_neighbor")
TARGET_SOURCES = ("ingested", "closed_form")


def derive_seed(seed, name) -> int:
    """Independent, reproducible sub-seed for one named random stream."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


@dataclass
class ExperimentConfig:
    dataset: str
    kgs: tuple = ("kg1",)
    fusion: str = "concat"
    fusion_weights: tuple = ()
    top_n: int | None = None
    loss_config: LossConfig = LossConfig.BOTH_NODES_LOSS
    graph_mode: GraphMode = GraphMode.FULLY_CONNECTED
    few_shot: bool = False
    few_shot_k: int = 5
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden: tuple = DEFAULT_HIDDEN
    encoder_decoder: bool = False
    normalize_outputs: bool = False
    target_source: str = "ingested"
    gamma: float = 1.0
    method: str = "gcn"
    metric: MetricKind | None = None
    linear_k: int = 4

    def __post_init__(self):
        self.kgs = tuple(self.kgs)
        self.fusion_weights = tuple(float(w) for w in self.fusion_weights)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.loss_config = LossConfig(self.loss_config)
        self.graph_mode = GraphMode(self.graph_mode)
        if self.metric is not None:
            self.metric = MetricKind(self.metric)
        if not self.kgs:
            raise ValidationError("select at least one knowledge graph")
        unknown = [k for k in self.kgs if k not in KG_NAMES]
        if unknown or len(set(self.kgs)) != len(self.kgs):
            raise ValidationError(f"bad graph selection {self.kgs}; choose distinct names from {KG_NAMES}")
        if self.fusion not in FUSIONS:
            raise ValidationError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.fusion == "weighted_sum" and len(self.kgs) > 1 and len(self.fusion_weights) != len(self.kgs):
            raise ValidationError(f"{len(self.kgs)} graphs selected but {len(self.fusion_weights)} fusion weights")
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.target_source not in TARGET_SOURCES:
            raise ValidationError(f"target source must be one of {TARGET_SOURCES}")
        if "kg3" in self.kgs and not self.few_shot:
            raise ValidationError("kg3 is built from support samples and needs few-shot mode")
        if self.method == "nearest_neighbor" and not self.few_shot:
            raise ValidationError("the nearest-neighbour baseline needs few-shot mode")
        if self.few_shot_k < 1:
            raise ValidationError("few_shot_k must be >= 1")

    def to_dict(self):
        def plain(v):
            if isinstance(v, (LossConfig, GraphMode, MetricKind)):
                return v.value
            if isinstance(v, TrainConfig):
                return dataclasses.asdict(v)
            if isinstance(v, tuple):
                return list(v)
            return v

        return {f.name: plain(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class ExperimentInputs:
    manifest: SplitManifest
    test_features: FeatureSet
    embeddings: EmbeddingTable | None = None
    bank: ClassifierBank | None = None
    auxiliary_bank: ClassifierBank | None = None
    lexicon: Lexicon | None = None
    train_features: FeatureSet | None = None
    support_features: FeatureSet | None = None
    auxiliary_features: FeatureSet | None = None
    kg2_overrides: dict | None = None
    digests: dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    report: EvaluationReport
    checkpoint: bytes
    provenance: dict
    loss_history: list
    lr_history: list
    w_test: np.ndarray | None
    graphs: dict


def make_targets(bank: ClassifierBank, graph: KnowledgeGraph, loss_config, auxiliary_bank=None) -> TrainTarget:
    """Regression targets for the training nodes selected by ``loss_config``."""
    loss_config = LossConfig(loss_config)
    train_idx = graph.indices(NodeRole.TRAIN)
    if not train_idx:
        raise ValidationError("graph has no training nodes")
    sets = [TargetSet(train_idx, bank.rows([graph.labels[i] for i in train_idx]), 1.0, "dataset")]
    if loss_config is LossConfig.BOTH_NODES_LOSS:
        aux_idx = graph.indices(NodeRole.AUXILIARY)
        if not aux_idx:
            raise ValidationError("loss on auxiliary nodes requested but the graph has none")
        if auxiliary_bank is None:
            raise ValidationError("loss on auxiliary nodes needs a classifier bank for them")
        rows = auxiliary_bank.rows([strip_aux(graph.labels[i]) for i in aux_idx])
        sets.append(TargetSet(aux_idx, rows, 1.0, "auxiliary"))
    target = TrainTarget(sets)
    assert_zero_shot(target, graph)
    return target


def assert_zero_shot(target: TrainTarget, graph: KnowledgeGraph):
    test = set(graph.indices(NodeRole.TEST))
    leaked = sorted(test.intersection(target.masked_nodes))
    if leaked:
        names = [graph.labels[i] for i in leaked[:5]]
        raise ValidationError(f"test nodes in the loss mask: {names}")


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except KgError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def _build_graphs(config, inputs, include_aux, seeds):
    m = inputs.manifest
    graphs, picked = {}, None
    if inputs.embeddings is None and set(config.kgs) - {"kg3"}:
        raise ValidationError("[build] an embedding table is required for kg1/kg2")
    if "kg1" in config.kgs:
        graphs["kg1"] = _stage(
            "build-kg1", build_kg1, m, inputs.embeddings, config.top_n, config.graph_mode, include_aux
        )
    if "kg2verb" in config.kgs or "kg2noun" in config.kgs:
        kg2 = _stage(
            "build-kg2", build_kg2, m, inputs.lexicon, inputs.embeddings, config.top_n,
            config.graph_mode, include_aux, inputs.kg2_overrides,
        )
        for part in ("verb", "noun"):
            if "kg2" + part in config.kgs:
                graphs["kg2" + part] = kg2[part]
    if "kg3" in config.kgs:
        if inputs.train_features is None:
            raise ValidationError("[build-kg3] training features are required")
        graphs["kg3"], picked = _stage(
            "build-kg3", build_kg3, m, inputs.train_features, inputs.support_features or inputs.test_features,
            config.few_shot_k, seeds["support"], config.top_n,
            None, inputs.auxiliary_features if include_aux else None,
        )
    ordered = {k: graphs[k] for k in config.kgs}
    first = next(iter(ordered.values()))
    for name, g in ordered.items():
        if g.labels != first.labels:
            raise ValidationError(f"graph {name} has a different node set from {config.kgs[0]}")
    return ordered, picked


def _support_ids(config, inputs, picked, seeds):
    if not config.few_shot:
        return ()
    pool = inputs.support_features or inputs.test_features
    if pool is None:
        raise ValidationError("few-shot mode needs support features")
    if picked is None:
        rng = np.random.default_rng(seeds["support"])
        picked = sample_supports(pool, inputs.manifest.test_classes, config.few_shot_k, rng)
    return tuple(pool.sample_ids[i] for c in inputs.manifest.test_classes for i in picked[c])


def evaluation_queries(manifest: SplitManifest, test_features: FeatureSet, exclude_ids=()):
    """Samples carrying a test label, minus any used as few-shot supports."""
    queries = test_features.restrict_labels(manifest.test_classes)
    if exclude_ids:
        skip = set(exclude_ids)
        queries = queries.subset([i for i, sid in enumerate(queries.sample_ids) if sid not in skip])
    if len(queries) == 0:
        raise ValidationError("no evaluation samples carry a test label")
    return queries


def evaluate_weights(manifest: SplitManifest, test_features: FeatureSet, w_test, metric=None, exclude_ids=()):
    """Score test samples against per-test-class weights and report the metric.

    ``w_test`` is a :class:`ClassifierBank` or a matrix whose rows follow
    ``manifest.test_classes``.
    """
    classes = list(manifest.test_classes)
    if isinstance(w_test, ClassifierBank):
        w_test = w_test.rows(classes)
    queries = evaluation_queries(manifest, test_features, exclude_ids)
    scores = predict(queries.features, w_test)
    metric = MetricKind(metric) if metric else (MetricKind.MAP if manifest.multi_label else MetricKind.MEAN_CLASS_ACCURACY)
    if metric is MetricKind.MAP:
        return mean_average_precision(scores, label_matrix(queries, classes), classes)
    pred = [classes[j] for j in argmax_labels(scores)]
    truth = [labs[0] for labs in queries.labels]
    seen = set(truth)
    present = [c for c in classes if c in seen]
    report = mean_class_accuracy(pred, truth, present)
    missing = [c for c in classes if c not in seen]
    if missing:
        report.warnings.append(f"test classes without evaluation samples: {missing}")
    return report


def _train_gcn(config, graphs, bank, aux_bank, seeds):
    tcfg = dataclasses.replace(config.train)
    if not config.few_shot:
        tcfg.few_shot_lr_override = None
    branches, targets = [], []
    for name, g in graphs.items():
        adj = _stage(f"normalize-{name}", normalize_adjacency, g)
        dims = [g.features.shape[1], *config.hidden, bank.dim]
        model = init_model(dims, seeds[f"init:{name}"], config.encoder_decoder, config.normalize_outputs)
        branches.append(Branch(model, adj, g.features))
        targets.append(_stage(f"targets-{name}", make_targets, bank, g, config.loss_config, aux_bank))
    names = list(graphs)
    if len(branches) == 1 or config.fusion == "weighted_sum":
        outputs, models, losses, lrs = [], [], [], []
        for name, b, t in zip(names, branches, targets):
            res = _stage(f"train-{name}", train, b.model, b.features, b.adjacency, t, tcfg)
            outputs.append(forward(res.model, b.adjacency, b.features).outputs)
            models.append(res.model)
            losses.append(res.loss_history)
            lrs = res.lr_history
        if len(outputs) == 1:
            fused = outputs[0]
        else:
            fused = fuse_weighted_sum(outputs, config.fusion_weights)
        blob = b"".join(model_to_bytes(m) for m in models)
        history = [float(sum(vals)) for vals in zip(*losses)] if len(losses) > 1 else losses[0]
        return fused, blob, history, lrs
    fusion_key = "kg3" if "kg3" in graphs else names[0]
    fusion_adj = branches[names.index(fusion_key)].adjacency
    width = sum(b.model.output_dim for b in branches)
    layer = init_fusion_layer(width, bank.dim, seeds["fusion"])
    fm = FusionModel(branches, fusion_adj, layer)
    res = _stage("train-fusion", train_fusion, fm, targets[names.index(fusion_key)], tcfg)
    fused, _ = res.model.forward()
    blob = b"".join(model_to_bytes(b.model) for b in res.model.branches)
    blob += model_to_bytes(GcnModel([res.model.fusion_layer]), fusion=True)
    return fused, blob, res.loss_history, res.lr_history


@dataclass
class FitResult:
    w_test: ClassifierBank
    checkpoint: bytes
    loss_history: list
    lr_history: list
    graphs: dict
    seeds: dict
    support_ids: tuple


def experiment_seeds(config: ExperimentConfig) -> dict:
    names = ["support", "fusion"] + [f"init:{k}" for k in config.kgs]
    return {name: derive_seed(config.seed, name) for name in names}


def resolve_bank(config: ExperimentConfig, inputs: ExperimentInputs) -> ClassifierBank:
    if config.target_source == "closed_form":
        if inputs.train_features is None:
            raise ValidationError("[targets] closed-form targets need training features")
        return _stage("targets", eszsl_targets, inputs.train_features, inputs.manifest, config.gamma)
    if inputs.bank is None:
        raise ValidationError("[targets] a classifier bank is required")
    return inputs.bank


def fit(config: ExperimentConfig, inputs: ExperimentInputs) -> FitResult:
    """Build graphs and produce classifier weights for every test class."""
    if config.method == "nearest_neighbor":
        raise ValidationError("the nearest-neighbour baseline has no weights to fit")
    m = inputs.manifest
    seeds = experiment_seeds(config)
    include_aux = config.loss_config.uses_auxiliary and bool(m.auxiliary_classes)
    if config.loss_config is LossConfig.BOTH_NODES_LOSS and not m.auxiliary_classes:
        raise ValidationError("loss on auxiliary nodes requested but the manifest lists none")
    if "kg3" in config.kgs and include_aux and inputs.auxiliary_features is None:
        raise ValidationError(
            "kg3 has no features for auxiliary nodes; pass auxiliary features or use loss config dataset_only"
        )
    graphs, picked = _build_graphs(config, inputs, include_aux, seeds)
    support_ids = _support_ids(config, inputs, picked, seeds)
    bank = resolve_bank(config, inputs)
    first = next(iter(graphs.values()))
    test_idx = first.indices(NodeRole.TEST)
    checkpoint, losses, lrs = b"", [], []
    if config.method == "linear_combination":
        w = _stage("linear-combination", linear_combination_baseline, first, bank, config.linear_k)
    else:
        fused, checkpoint, losses, lrs = _train_gcn(config, graphs, bank, inputs.auxiliary_bank, seeds)
        w = fused[test_idx]
    w_test = ClassifierBank(tuple(first.labels[i] for i in test_idx), w)
    return FitResult(w_test, checkpoint, losses, lrs, graphs, seeds, support_ids)


def manifest_fingerprint(m: SplitManifest) -> str:
    blob = json.dumps(
        [m.name, list(m.train_classes), list(m.test_classes), list(m.auxiliary_classes), sorted(m.aliases.items())],
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def run_experiment(config: ExperimentConfig, inputs: ExperimentInputs) -> ExperimentResult:
    """build -> normalize -> train -> fuse -> predict -> evaluate."""
    m = inputs.manifest
    if config.method == "nearest_neighbor":
        seeds = experiment_seeds(config)
        support_ids = _support_ids(config, inputs, None, seeds)
        pool = inputs.support_features or inputs.test_features
        keep = set(support_ids)
        support = pool.subset([i for i, sid in enumerate(pool.sample_ids) if sid in keep])
        support = support.restrict_labels(m.test_classes)
        queries = evaluation_queries(m, inputs.test_features, support_ids)
        report, _ = _stage("evaluate", nearest_neighbor_baseline, support, queries, list(m.test_classes))
        fitted = FitResult(None, b"", [], [], {}, seeds, support_ids)
    else:
        fitted = fit(config, inputs)
        report = _stage(
            "evaluate", evaluate_weights, m, inputs.test_features, fitted.w_test, config.metric, fitted.support_ids
        )
    report.config_fingerprint = config.fingerprint()
    provenance = {
        "version": __version__,
        "config": config.to_dict(),
        "config_hash": report.config_fingerprint,
        "manifest_fingerprint": manifest_fingerprint(m),
        "seeds": fitted.seeds,
        "inputs": dict(sorted(inputs.digests.items())),
        "graphs": {k: {"nodes": g.node_count, "fingerprint": g.fingerprint()} for k, g in fitted.graphs.items()},
        "checkpoint_sha256": hashlib.sha256(fitted.checkpoint).hexdigest(),
        "final_loss": fitted.loss_history[-1] if fitted.loss_history else None,
        "support_ids": list(fitted.support_ids),
        "overall": report.overall,
    }
    w = fitted.w_test.weights if fitted.w_test is not None else None
    return ExperimentResult(report, fitted.checkpoint, provenance, fitted.loss_history, fitted.lr_history, w, fitted.graphs)
