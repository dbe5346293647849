"""Reference methods the GCN is compared against."""

from __future__ import annotations

import numpy as np

from .._accel import row_norms_kernel
from ..errors import NumericError, ValidationError
from ..graph import KnowledgeGraph, NodeRole, similarity_matrix
from ..lexicon import SplitManifest
from ..numerics import matmul, matmul_tn
from .data import BankSource, ClassifierBank, FeatureSet
from .metrics import mean_class_accuracy


def linear_combination_baseline(graph: KnowledgeGraph, bank: ClassifierBank, k=4) -> np.ndarray:
    """Test-class weights as a similarity-weighted mean of the ``k`` most
    similar training classes' weights.

    Rows follow the graph's test-node order.  Only positively similar
    neighbours contribute, so every output row lies in the convex hull of
    the rows it averages.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    train = np.asarray(graph.indices(NodeRole.TRAIN), dtype=np.int64)
    test = graph.indices(NodeRole.TEST)
    if train.size < k:
        raise ValidationError(f"only {train.size} training nodes, need k={k}")
    sim = similarity_matrix(graph.features, graph.labels)
    rows = bank.rows([graph.labels[j] for j in train])
    out = np.zeros((len(test), bank.dim))
    for r, i in enumerate(test):
        s = sim[i, train]
        order = np.lexsort((train, -s))[:k]
        order = order[s[order] > 0]
        if order.size == 0:
            raise ValidationError(f"test node {graph.labels[i]!r} has no positively similar training node")
        w = s[order]
        acc = np.zeros(bank.dim)
        for weight, j in zip(w, order):
            acc += weight * rows[j]
        out[r] = acc / w.sum()
    return out


def nearest_neighbor_baseline(support: FeatureSet, queries: FeatureSet, classes=None):
    """Assign each query to the class whose support mean is most cosine-similar.

    Queries are scored by their first label.  Returns the report and the
    predicted class per query.
    """
    classes = list(classes) if classes is not None else sorted(support.by_class())
    centers = support.class_means(classes)
    cnorm = row_norms_kernel(centers)
    bad = np.nonzero(cnorm <= 1e-12)[0]
    if bad.size:
        raise ValidationError(f"zero-norm center for class {classes[int(bad[0])]!r}")
    qnorm = row_norms_kernel(queries.features)
    sims = matmul(queries.features, np.ascontiguousarray(centers.T)) / cnorm[None, :]
    sims = sims / np.maximum(qnorm, 1e-300)[:, None]
    pred = [classes[j] for j in np.argmax(sims, axis=1)]
    truth = [labs[0] for labs in queries.labels]
    seen = set(truth)
    report = mean_class_accuracy(pred, truth, [c for c in classes if c in seen])
    missing = [c for c in classes if c not in seen]
    if missing:
        report.warnings.append(f"test classes without evaluation samples: {missing}")
    return report, pred


def label_matrix(features: FeatureSet, classes) -> np.ndarray:
    index = {c: j for j, c in enumerate(classes)}
    y = np.zeros((len(features), len(classes)))
    for i, labs in enumerate(features.labels):
        for lab in labs:
            if lab in index:
                y[i, index[lab]] = 1.0
    return y


def eszsl_targets(train_features: FeatureSet, manifest: SplitManifest, gamma=1.0) -> ClassifierBank:
    """Closed-form classifier rows from ridge regression of labels on features.

    Solves ``W = (F^T F + gamma I)^-1 F^T Y`` with one column per training
    class and returns the columns as bank rows.
    """
    if not gamma > 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    classes = list(manifest.train_classes)
    fs = train_features.restrict_labels(classes)
    if len(fs) == 0:
        raise ValidationError("no training samples carry a training label")
    f = fs.features
    y = label_matrix(fs, classes)
    gram = matmul_tn(f, f) + gamma * np.eye(f.shape[1])
    rhs = matmul_tn(f, y)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e15:
        raise NumericError(f"regularized system is singular (condition estimate {cond:.3g})")
    w = np.linalg.solve(gram, rhs)
    if not np.all(np.isfinite(w)):
        raise NumericError(f"closed-form weights are not finite (condition estimate {cond:.3g})")
    return ClassifierBank(tuple(classes), np.ascontiguousarray(w.T), BankSource.CLOSED_FORM)
