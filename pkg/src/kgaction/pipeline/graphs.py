"""Assemble the three knowledge graphs from a split manifest."""

from __future__ import annotations

import enum

import numpy as np

from ..errors import ValidationError
from ..graph import GraphMode, KnowledgeGraph, NodeRole, build_graph
from ..lexicon import EmbeddingTable, Lexicon, SplitManifest, default_lexicon, embed_phrase, parse_action_phrase
from .data import FeatureSet

AUX_PREFIX = "kinetics:"


class LossConfig(enum.Enum):
    """Which nodes are in the graph and which carry a regression target."""

    DATASET_ONLY = "dataset_only"  # dataset nodes only, loss on dataset train nodes
    DATASET_NODES_LOSS = "dataset_nodes_loss"  # + auxiliary nodes, loss on dataset train nodes
    BOTH_NODES_LOSS = "both_nodes_loss"  # + auxiliary nodes, loss on both

    @property
    def uses_auxiliary(self):
        return self is not LossConfig.DATASET_ONLY


def aux_label(name):
    return AUX_PREFIX + name


def strip_aux(label):
    return label[len(AUX_PREFIX):] if label.startswith(AUX_PREFIX) else label


def graph_nodes(manifest: SplitManifest, include_auxiliary=True):
    """Node labels and roles in graph order: train, test, then auxiliary.

    Auxiliary labels are namespaced because pre-training class names can
    coincide with dataset class names.
    """
    labels = list(manifest.train_classes) + list(manifest.test_classes)
    roles = [NodeRole.TRAIN] * len(manifest.train_classes) + [NodeRole.TEST] * len(manifest.test_classes)
    if include_auxiliary:
        labels += [aux_label(c) for c in manifest.auxiliary_classes]
        roles += [NodeRole.AUXILIARY] * len(manifest.auxiliary_classes)
    return labels, roles


def _lookup_key(manifest, label):
    if label.startswith(AUX_PREFIX):
        return strip_aux(label)
    return manifest.embedding_key(label)


def _embed(manifest, label, phrase, table, warnings):
    try:
        return embed_phrase(phrase, table, warnings)
    except ValidationError:
        chain = [label]
        if strip_aux(label) != label:
            chain.append(strip_aux(label))
        elif manifest.embedding_key(label) != label:
            chain.append(manifest.embedding_key(label))
        if phrase != chain[-1]:
            chain.append(phrase)
        raise ValidationError(
            f"no embedding for label {label!r} (lookup chain: {' -> '.join(map(repr, chain))})"
        ) from None


def _top_n(manifest, top_n):
    if top_n is not None:
        return int(top_n)
    return manifest.top_n if manifest.top_n is not None else 5


def build_kg1(
    manifest: SplitManifest,
    embeddings: EmbeddingTable,
    top_n=None,
    mode=GraphMode.FULLY_CONNECTED,
    include_auxiliary=True,
    warnings=None,
) -> KnowledgeGraph:
    """Graph whose node features are embeddings of the class names."""
    labels, roles = graph_nodes(manifest, include_auxiliary)
    feats = np.vstack([_embed(manifest, lab, _lookup_key(manifest, lab), embeddings, warnings) for lab in labels])
    return build_graph(labels, roles, feats, _top_n(manifest, top_n), _mode(mode, roles))


def _mode(mode, roles):
    mode = GraphMode(mode)
    if mode is GraphMode.BIPARTITE and NodeRole.AUXILIARY not in roles:
        raise ValidationError("a bipartite graph needs auxiliary nodes")
    return mode


def label_pairs(manifest: SplitManifest, lexicon: Lexicon | None = None, overrides=None):
    """Verb/noun decomposition for every node label.

    ``overrides`` maps a label to a ``(verb, noun)`` tuple, for datasets that
    ship their own decomposition.
    """
    lexicon = lexicon or default_lexicon()
    overrides = overrides or {}
    labels, _ = graph_nodes(manifest, True)
    out = {}
    for lab in labels:
        if lab in overrides:
            out[lab] = tuple(overrides[lab])
        else:
            p = parse_action_phrase(_lookup_key(manifest, lab), lexicon)
            out[lab] = (p.verb, p.noun)
    return out


def build_kg2(
    manifest: SplitManifest,
    lexicon: Lexicon | None,
    embeddings: EmbeddingTable,
    top_n=None,
    mode=GraphMode.FULLY_CONNECTED,
    include_auxiliary=True,
    overrides=None,
    warnings=None,
):
    """Verb-only and noun-only graphs over the same nodes as :func:`build_kg1`.

    Returns ``{"verb": graph, "noun": graph}``.
    """
    labels, roles = graph_nodes(manifest, include_auxiliary)
    pairs = label_pairs(manifest, lexicon, overrides)
    mode = _mode(mode, roles)
    n = _top_n(manifest, top_n)
    out = {}
    for slot, name in ((0, "verb"), (1, "noun")):
        feats = np.vstack([_embed(manifest, lab, pairs[lab][slot], embeddings, warnings) for lab in labels])
        out[name] = build_graph(labels, roles, feats, n, mode)
    return out


def sample_supports(support: FeatureSet, classes, k, rng):
    """Pick ``k`` sample indices per class; returns ``{class: [indices]}``."""
    groups = support.by_class()
    picked = {}
    for c in classes:
        idx = groups.get(c, [])
        if len(idx) < k:
            raise ValidationError(f"class {c!r} has {len(idx)} support samples, need {k}")
        chosen = rng.choice(len(idx), size=k, replace=False)
        picked[c] = sorted(idx[i] for i in chosen)
    return picked


def build_kg3(
    manifest: SplitManifest,
    train_features: FeatureSet,
    support_features: FeatureSet,
    k=5,
    seed=0,
    top_n=None,
    train_k=None,
    auxiliary_features: FeatureSet | None = None,
):
    """Graph whose node features are mean visual features.

    Test nodes average ``k`` seeded-random support samples.  Train nodes
    average all their training samples, or ``train_k`` random ones if given.
    Auxiliary nodes are included only when ``auxiliary_features`` is passed.
    Returns ``(graph, picked)`` where ``picked`` maps each test class to the
    support indices used.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    picked = sample_supports(support_features, manifest.test_classes, k, rng)
    if train_k is None:
        train_means = train_features.class_means(manifest.train_classes)
    else:
        chosen = sample_supports(train_features, manifest.train_classes, train_k, rng)
        train_means = np.vstack([train_features.features[chosen[c]].mean(axis=0) for c in manifest.train_classes])
    test_means = np.vstack([support_features.features[picked[c]].mean(axis=0) for c in manifest.test_classes])
    include_aux = auxiliary_features is not None
    labels, roles = graph_nodes(manifest, include_aux)
    parts = [train_means, test_means]
    if include_aux:
        parts.append(auxiliary_features.class_means(manifest.auxiliary_classes))
    graph = build_graph(labels, roles, np.vstack(parts), _top_n(manifest, top_n))
    return graph, picked
