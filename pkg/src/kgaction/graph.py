"""Knowledge-graph construction: cosine top-N adjacency and its normalization."""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .errors import DimensionError, NumericError, ValidationError
from .numerics import SparseMatrix, as_dense, matmul


class NodeRole(enum.Enum):
    TRAIN = "train"
    TEST = "test"
    AUXILIARY = "auxiliary"


class GraphMode(enum.Enum):
    FULLY_CONNECTED = "fc"
    BIPARTITE = "bipartite"


def sparse_fingerprint(s: SparseMatrix) -> str:
    h = hashlib.sha256()
    h.update(str(s.dim).encode())
    for arr in (s.row_offsets, s.col_indices, s.values):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class KnowledgeGraph:
    labels: tuple
    roles: tuple
    features: np.ndarray
    adjacency: SparseMatrix
    top_n: int
    mode: GraphMode = GraphMode.FULLY_CONNECTED

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "roles", tuple(NodeRole(r) for r in self.roles))
        n = len(self.labels)
        if len(set(self.labels)) != n:
            raise ValidationError("graph labels must be unique")
        if len(self.roles) != n or self.adjacency.dim != n or self.features.shape[0] != n:
            raise DimensionError(
                f"graph parts disagree: {n} labels, {len(self.roles)} roles, "
                f"features {self.features.shape}, adjacency {self.adjacency.shape}"
            )

    @property
    def node_count(self):
        return len(self.labels)

    def indices(self, role):
        role = NodeRole(role)
        return [i for i, r in enumerate(self.roles) if r is role]

    def index_of(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"no node labelled {label!r}") from None

    def degrees(self):
        return np.diff(self.adjacency.row_offsets)

    def fingerprint(self):
        h = hashlib.sha256()
        h.update("\x1f".join(self.labels).encode())
        h.update("\x1f".join(r.value for r in self.roles).encode())
        h.update(sparse_fingerprint(self.adjacency).encode())
        h.update(np.ascontiguousarray(self.features).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class NormalizedAdjacency:
    matrix: SparseMatrix
    source_fingerprint: str

    @property
    def dim(self):
        return self.matrix.dim


def cosine_similarity(u, v, names=None) -> float:
    """Cosine similarity of two vectors; ``names`` labels them in errors."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise DimensionError(f"vector lengths differ: {u.size} vs {v.size}")
    names = names or ("u", "v")
    dot = nu = nv = 0.0
    for a, b in zip(u.tolist(), v.tolist()):
        dot += a * b
        nu += a * a
        nv += b * b
    nu, nv = math.sqrt(nu), math.sqrt(nv)
    for norm, name in ((nu, names[0]), (nv, names[1])):
        if norm <= 1e-12:
            raise ValidationError(f"zero-norm feature vector for node {name!r}")
    return min(1.0, max(-1.0, dot / (nu * nv)))


def similarity_matrix(features, labels=None) -> np.ndarray:
    """All-pairs cosine similarity, exactly symmetric, clipped to [-1, 1]."""
    x = as_dense(features, "features")
    norms = _accel.row_norms_kernel(x)
    small = np.nonzero(norms <= 1e-12)[0]
    if small.size:
        i = int(small[0])
        name = labels[i] if labels is not None else i
        raise ValidationError(f"zero-norm feature vector for node {name!r}")
    gram = matmul(x, np.ascontiguousarray(x.T))
    sim = gram / (norms[:, None] * norms[None, :])
    return np.clip(sim, -1.0, 1.0)


def _select(sim_row, candidates, top_n):
    # descending similarity, lower index first on ties
    candidates = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -sim_row[candidates]))
    return candidates[order[:top_n]]


def _symmetric_union(n, selections, sim):
    pairs = set()
    for i, chosen in enumerate(selections):
        for j in chosen:
            j = int(j)
            pairs.add((i, j))
            pairs.add((j, i))
    if not pairs:
        return SparseMatrix.empty(n)
    rows, cols = zip(*sorted(pairs))
    rows = np.array(rows)
    cols = np.array(cols)
    # weights read from one triangle so A[i, j] and A[j, i] are the same double
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    return SparseMatrix.from_coo(n, rows, cols, sim[lo, hi])


def build_fc_adjacency(features, top_n, labels=None) -> SparseMatrix:
    """Symmetric union of each node's ``top_n`` most cosine-similar other nodes."""
    x = as_dense(features, "features")
    n = x.shape[0]
    if n < 2:
        raise ValidationError("need at least two nodes to build an adjacency")
    if top_n < 1:
        raise ValidationError(f"top_n must be >= 1, got {top_n}")
    if top_n >= n:
        raise ValidationError(f"top_n={top_n} but only {n - 1} other nodes exist")
    sim = similarity_matrix(x, labels)
    everyone = np.arange(n)
    selections = [_select(sim[i], everyone[everyone != i], top_n) for i in range(n)]
    return _symmetric_union(n, selections, sim)


def build_bipartite_adjacency(features, partition, top_n, labels=None) -> SparseMatrix:
    """Like :func:`build_fc_adjacency` but only across the two partitions."""
    x = as_dense(features, "features")
    side = np.asarray(partition, dtype=bool).reshape(-1)
    n = x.shape[0]
    if side.size != n:
        raise DimensionError(f"partition has {side.size} flags for {n} nodes")
    left, right = np.nonzero(side)[0], np.nonzero(~side)[0]
    if left.size == 0 or right.size == 0:
        raise ValidationError("both partitions must be non-empty")
    if top_n < 1:
        raise ValidationError(f"top_n must be >= 1, got {top_n}")
    if top_n > min(left.size, right.size):
        raise ValidationError(
            f"top_n={top_n} exceeds a partition size ({left.size}, {right.size})"
        )
    sim = similarity_matrix(x, labels)
    selections = [_select(sim[i], right if side[i] else left, top_n) for i in range(n)]
    return _symmetric_union(n, selections, sim)


def normalize_adjacency(a) -> NormalizedAdjacency:
    """Symmetric normalization ``D^-1/2 (I + A) D^-1/2`` with weighted degrees.

    Accepts a :class:`SparseMatrix` or a :class:`KnowledgeGraph`.
    """
    if isinstance(a, KnowledgeGraph):
        source = a.fingerprint()
        a = a.adjacency
    else:
        source = sparse_fingerprint(a)
    n = a.dim
    rows = np.repeat(np.arange(n), np.diff(a.row_offsets))
    if np.any(rows == a.col_indices):
        raise ValidationError("adjacency must have an empty diagonal")
    if not a.is_symmetric():
        raise ValidationError("adjacency must be symmetric")
    degree = np.ones(n)
    for i in range(n):
        for w in a.row(i)[1]:
            degree[i] += w
    bad = np.nonzero(degree <= 0.0)[0]
    if bad.size:
        i = int(bad[0])
        raise NumericError(f"node {i} has non-positive weighted degree {degree[i]!r}")
    inv_sqrt = 1.0 / np.sqrt(degree)
    all_rows = np.concatenate([rows, np.arange(n)])
    all_cols = np.concatenate([a.col_indices, np.arange(n)])
    all_vals = np.concatenate([a.values, np.ones(n)])
    scale = inv_sqrt[all_rows] * inv_sqrt[all_cols]
    matrix = SparseMatrix.from_coo(n, all_rows, all_cols, all_vals * scale)
    return NormalizedAdjacency(matrix, source)


def build_graph(labels, roles, features, top_n, mode=GraphMode.FULLY_CONNECTED) -> KnowledgeGraph:
    labels = tuple(labels)
    roles = tuple(NodeRole(r) for r in roles)
    x = as_dense(features, "features")
    mode = GraphMode(mode)
    if mode is GraphMode.FULLY_CONNECTED:
        adj = build_fc_adjacency(x, top_n, labels)
    else:
        partition = [r is NodeRole.AUXILIARY for r in roles]
        adj = build_bipartite_adjacency(x, partition, top_n, labels)
    return KnowledgeGraph(labels, roles, x, adj, top_n, mode)


def append_nodes(g: KnowledgeGraph, labels, roles, features) -> KnowledgeGraph:
    """Return a new graph with extra nodes; the adjacency is rebuilt from scratch."""
    labels = tuple(labels)
    clash = set(labels) & set(g.labels)
    if clash or len(set(labels)) != len(labels):
        raise ValidationError(f"duplicate labels: {sorted(clash) or labels}")
    if not labels:
        return g
    x = as_dense(features, "new features")
    if x.shape != (len(labels), g.features.shape[1]):
        raise DimensionError(
            f"new features {x.shape} do not match {len(labels)} labels of dim {g.features.shape[1]}"
        )
    return build_graph(
        g.labels + labels,
        g.roles + tuple(roles),
        np.vstack([g.features, x]),
        g.top_n,
        g.mode,
    )


# --------------------------------------------------------------------------
# edge-list files

def edge_list_text(g: KnowledgeGraph) -> str:
    lines = [f"# top_n={g.top_n} mode={g.mode.value}"]
    for label, role in zip(g.labels, g.roles):
        if "\t" in label or "\n" in label:
            raise ValidationError(f"label {label!r} contains a tab or newline")
        lines.append(f"node\t{label}\t{role.value}")
    for i, j, w in g.adjacency.edges():
        lines.append(f"{g.labels[i]}\t{g.labels[j]}\t{w!r}")
    return "\n".join(lines) + "\n"


def write_edge_list(path, g: KnowledgeGraph):
    Path(path).write_text(edge_list_text(g), encoding="utf-8")


def read_edge_list(path, features=None) -> KnowledgeGraph:
    """Read a graph written by :func:`write_edge_list`.

    Node features are not part of the file; pass them in, or the graph gets
    an ``N x 0`` feature matrix.
    """
    labels, roles, triples = [], [], []
    top_n, mode = 1, GraphMode.FULLY_CONNECTED
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        if raw.startswith("#"):
            for tok in raw[1:].split():
                key, _, val = tok.partition("=")
                if key == "top_n":
                    top_n = int(val)
                elif key == "mode":
                    mode = GraphMode(val)
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated fields")
        if parts[0] == "node":
            labels.append(parts[1])
            roles.append(NodeRole(parts[2]))
        else:
            triples.append((parts[0], parts[1], float(parts[2]), lineno))
    index = {lab: i for i, lab in enumerate(labels)}
    rows, cols, vals = [], [], []
    for src, dst, w, lineno in triples:
        if src not in index or dst not in index:
            raise ValidationError(f"{path}:{lineno}: edge references an undeclared node")
        rows.append(index[src])
        cols.append(index[dst])
        vals.append(w)
    adj = SparseMatrix.from_coo(len(labels), rows, cols, vals)
    if features is None:
        features = np.zeros((len(labels), 0))
    return KnowledgeGraph(tuple(labels), tuple(roles), np.asarray(features, float), adj, top_n, mode)
