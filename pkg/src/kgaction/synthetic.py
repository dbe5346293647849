"""Synthetic zero-shot task with a known ground-truth classifier map.

Classes live in a 16-dim embedding space as 6 clusters.  Inside a cluster
the 5 classes sit at evenly spaced positions along a random direction, and
the true classifier row of each class is a fixed linear map of its
embedding plus small noise.  The hidden test class of every cluster is the
one at the far end of its line, so its weights cannot be obtained by
averaging neighbours; a model has to learn the embedding-to-classifier map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gcn import TargetSet, TrainConfig, TrainTarget, forward, init_model, train
from .graph import KnowledgeGraph, build_graph, normalize_adjacency
from .pipeline.baselines import linear_combination_baseline
from .pipeline.data import ClassifierBank
from .pipeline.metrics import argmax_labels, predict

SCALED_DIMS = (16, 32, 64, 64, 64, 64, 32)


@dataclass
class SyntheticTask:
    graph: KnowledgeGraph
    true_weights: np.ndarray
    test_nodes: np.ndarray
    train_nodes: np.ndarray
    features: np.ndarray
    feature_labels: np.ndarray

    @property
    def bank(self):
        labels = [self.graph.labels[i] for i in self.train_nodes]
        return ClassifierBank(tuple(labels), self.true_weights[self.train_nodes])

    def target(self):
        return TrainTarget([TargetSet(self.train_nodes, self.true_weights[self.train_nodes])])


def make_task(
    seed,
    n_clusters=6,
    per_cluster=5,
    d_emb=16,
    d_out=32,
    step=0.3,
    jitter=0.05,
    weight_noise=0.01,
    feature_noise=1.0,
    samples_per_class=50,
    top_n=2,
) -> SyntheticTask:
    rng = np.random.default_rng(seed)
    n = n_clusters * per_cluster
    centers = rng.normal(size=(n_clusters, d_emb))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    axes = rng.normal(size=(n_clusters, d_emb))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    cluster = np.repeat(np.arange(n_clusters), per_cluster)
    pos = np.tile(np.arange(per_cluster) - (per_cluster - 1) / 2, n_clusters)
    x = centers[cluster] + step * pos[:, None] * axes[cluster]
    x += jitter * rng.normal(size=(n, d_emb)) / np.sqrt(d_emb)
    m = rng.normal(size=(d_emb, d_out)) / np.sqrt(d_emb)
    w = x @ m + weight_noise * rng.normal(size=(n, d_out))

    test = np.array([k * per_cluster + per_cluster - 1 for k in range(n_clusters)])
    train_nodes = np.setdiff1d(np.arange(n), test)
    roles = ["test" if i in set(test.tolist()) else "train" for i in range(n)]
    graph = build_graph([f"class{i:02d}" for i in range(n)], roles, x, top_n)

    labels = np.repeat(np.arange(n_clusters), samples_per_class)
    scale = feature_noise * np.linalg.norm(w[test], axis=1).mean() / np.sqrt(d_out)
    feats = w[test][labels] + scale * rng.normal(size=(labels.size, d_out))
    return SyntheticTask(graph, w, test, train_nodes, feats, labels)


def class_mean_accuracy(scores, labels):
    pred = argmax_labels(scores)
    classes = np.unique(labels)
    return float(np.mean([np.mean(pred[labels == c] == c) for c in classes]))


@dataclass
class RecoveryResult:
    seed: int
    loss_ratio: float
    gcn_accuracy: float
    baseline_accuracy: float
    oracle_accuracy: float


def run_recovery(seed, epochs=3000, dims=SCALED_DIMS, **task_kw) -> RecoveryResult:
    """Train on the visible classes and score the hidden ones."""
    task = make_task(seed, **task_kw)
    adj = normalize_adjacency(task.graph)
    model = init_model(list(dims), seed)
    res = train(model, task.graph, adj, task.target(), TrainConfig(epochs=epochs, seed=seed))
    out = forward(res.model, adj, task.graph.features).outputs
    lin = linear_combination_baseline(task.graph, task.bank, k=4)
    acc = lambda w: class_mean_accuracy(predict(task.features, w), task.feature_labels)  # noqa: E731
    return RecoveryResult(
        seed,
        res.loss_history[-1] / res.loss_history[0],
        acc(out[task.test_nodes]),
        acc(lin),
        acc(task.true_weights[task.test_nodes]),
    )


# --------------------------------------------------------------------------
# small on-disk dataset for exercising the command line

TOY_TRAIN = (
    "playing guitar", "riding horse", "throwing ball", "climbing rope",
    "cutting bread", "brushing teeth", "playing drums", "riding bike",
)
TOY_TEST = ("kicking ball", "climbing wall", "cutting wood", "brushing hair")
TOY_AUXILIARY = ("playing piano", "riding camel", "throwing axe", "climbing tree", "cutting nails", "kicking stone")


def write_toy_dataset(directory, seed=0, d_emb=8, d_out=6, train_per_class=6, test_per_class=8):
    """Write manifest, embeddings, banks and features for a 12-class toy
    dataset with 6 auxiliary classes.  Returns the written paths by role."""
    from pathlib import Path

    from .lexicon import SplitManifest, parse_action_phrase, write_split_manifest
    from .pipeline.data import ClassifierBank, FeatureSet, write_bank_text, write_features_text

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    classes = TOY_TRAIN + TOY_TEST + TOY_AUXILIARY
    pairs = {c: parse_action_phrase(c) for c in classes}
    words = sorted({p.verb for p in pairs.values()} | {p.noun for p in pairs.values()})
    word_vec = {w: rng.normal(size=d_emb) for w in words}
    phrase_vec = {c: word_vec[pairs[c].verb] + word_vec[pairs[c].noun] + 0.1 * rng.normal(size=d_emb) for c in classes}
    m = rng.normal(size=(d_emb, d_out)) / np.sqrt(d_emb)
    true_w = {c: phrase_vec[c] @ m for c in classes}

    emb_lines = [f"{len(words) + len(classes)} {d_emb}"]
    for key, vec in [(c, phrase_vec[c]) for c in classes] + [(w, word_vec[w]) for w in words]:
        emb_lines.append(key.replace(" ", "_") + " " + " ".join(repr(float(v)) for v in vec))
    word_lines = [w + " " + " ".join(repr(float(v)) for v in word_vec[w]) for w in words]

    def samples(names, per, prefix):
        ids, feats, labels = [], [], []
        for c in names:
            for _ in range(per):
                ids.append(f"{prefix}{len(ids):04d}")
                feats.append(true_w[c] + 0.3 * rng.normal(size=d_out))
                labels.append((c,))
        return FeatureSet(tuple(ids), np.array(feats), tuple(labels))

    manifest = SplitManifest(
        name="toy",
        train_classes=TOY_TRAIN,
        test_classes=TOY_TEST,
        kinetics_overlap=(("playing guitar", "playing guitar"),),
        auxiliary_classes=TOY_AUXILIARY,
        top_n=2,
    )
    paths = {
        "manifest": directory / "toy.manifest",
        "embeddings": directory / "embeddings.txt",
        "word_embeddings": directory / "word_embeddings.txt",
        "bank": directory / "train.bank",
        "full_bank": directory / "all_classes.bank",
        "auxiliary_bank": directory / "auxiliary.bank",
        "train_features": directory / "train.features",
        "test_features": directory / "test.features",
        "auxiliary_features": directory / "auxiliary.features",
    }
    write_split_manifest(paths["manifest"], manifest)
    paths["embeddings"].write_text("\n".join(emb_lines) + "\n", encoding="utf-8")
    paths["word_embeddings"].write_text("\n".join(word_lines) + "\n", encoding="utf-8")
    write_bank_text(paths["bank"], ClassifierBank(TOY_TRAIN, np.array([true_w[c] for c in TOY_TRAIN])))
    every = TOY_TRAIN + TOY_TEST
    write_bank_text(paths["full_bank"], ClassifierBank(every, np.array([true_w[c] for c in every])))
    write_bank_text(paths["auxiliary_bank"], ClassifierBank(TOY_AUXILIARY, np.array([true_w[c] for c in TOY_AUXILIARY])))
    write_features_text(paths["train_features"], samples(TOY_TRAIN, train_per_class, "tr"))
    write_features_text(paths["test_features"], samples(TOY_TEST, test_per_class, "te"))
    write_features_text(paths["auxiliary_features"], samples(TOY_AUXILIARY, 3, "ax"))
    return paths
