"""Graph convolutional network that regresses classifier weights.

Each layer computes ``act(M @ H @ W)`` where ``M`` is the normalized
adjacency.  Gradients are derived by hand and checked against central
differences in the test suite.
"""

from __future__ import annotations

import copy
import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, NumericError, ValidationError
from .graph import KnowledgeGraph, NormalizedAdjacency
from .numerics import (
    AdamState,
    adam_step,
    as_dense,
    dense_from_bytes,
    dense_to_bytes,
    matmul,
    matmul_tn,
    relu,
    relu_backward,
    spmm,
)

DEFAULT_HIDDEN = (512, 1024, 1024, 1024, 1024, 1024)
CHECKPOINT_MAGIC = b"KGCN"
CHECKPOINT_VERSION = 1

_FLAG_ENCODER = 1
_FLAG_NORMALIZE = 2
_FLAG_FUSION = 4


@dataclass
class GcnLayer:
    weights: np.ndarray
    apply_activation: bool = True

    @property
    def d_in(self):
        return self.weights.shape[0]

    @property
    def d_out(self):
        return self.weights.shape[1]


@dataclass
class GcnModel:
    layers: list
    encoder_decoder: list | None = None
    normalize_outputs: bool = False
    version: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("a model needs at least one layer")
        chain = ([] if self.encoder_decoder is None else list(self.encoder_decoder)) + list(self.layers)
        for a, b in zip(chain, chain[1:]):
            if a.d_out != b.d_in:
                raise DimensionError(f"layer dims do not chain: {a.weights.shape} -> {b.weights.shape}")

    @property
    def dims(self):
        return [self.layers[0].d_in] + [layer.d_out for layer in self.layers]

    @property
    def input_dim(self):
        return (self.encoder_decoder or self.layers)[0].d_in

    @property
    def output_dim(self):
        return self.layers[-1].d_out

    def parameters(self):
        """Weight matrices in a fixed order: encoder, decoder, then GCN layers."""
        return [layer.weights for layer in (self.encoder_decoder or []) + list(self.layers)]

    def set_parameters(self, params):
        for layer, w in zip((self.encoder_decoder or []) + list(self.layers), params):
            layer.weights = w
        self.version += 1


def _glorot(rng, d_in, d_out):
    bound = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_in, d_out))


def init_model(dims, seed, encoder_decoder=False, normalize_outputs=False) -> GcnModel:
    """Glorot-uniform GCN with ``len(dims) - 1`` layers; the last is linear."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValidationError(f"need at least an input and an output dim, got {dims}")
    rng = np.random.default_rng(seed)
    enc = None
    if encoder_decoder:
        mid = max(1, dims[0] // 2)
        enc = [GcnLayer(_glorot(rng, dims[0], mid), True), GcnLayer(_glorot(rng, mid, dims[0]), False)]
    layers = [
        GcnLayer(_glorot(rng, a, b), apply_activation=(i < len(dims) - 2))
        for i, (a, b) in enumerate(zip(dims, dims[1:]))
    ]
    return GcnModel(layers, enc, normalize_outputs)


def default_dims(d_emb, d_out=1024, hidden=DEFAULT_HIDDEN[:-1]):
    return [d_emb, *hidden, d_out]


# --------------------------------------------------------------------------
# forward / loss / backward

@dataclass
class ForwardCache:
    inputs: np.ndarray
    encoder: list
    layers: list
    raw_outputs: np.ndarray
    output_norms: np.ndarray | None
    adjacency_fingerprint: str
    model_version: int
    model_id: int


@dataclass
class ForwardResult:
    outputs: np.ndarray
    cache: ForwardCache


def forward(model: GcnModel, norm_adj: NormalizedAdjacency, features) -> ForwardResult:
    x = as_dense(features, "features")
    if x.shape[0] != norm_adj.dim:
        raise DimensionError(f"{x.shape[0]} feature rows for a {norm_adj.dim}-node graph")
    if x.shape[1] != model.input_dim:
        raise DimensionError(f"features have dim {x.shape[1]}, model expects {model.input_dim}")
    h = x
    enc_cache = []
    for layer in model.encoder_decoder or []:
        pre = matmul(h, layer.weights)
        enc_cache.append((h, pre))
        h = relu(pre) if layer.apply_activation else pre
    layer_cache = []
    for layer in model.layers:
        z = spmm(norm_adj.matrix, h)
        pre = matmul(z, layer.weights)
        layer_cache.append((z, pre))
        h = relu(pre) if layer.apply_activation else pre
    raw = h
    norms = None
    if model.normalize_outputs:
        norms = np.sqrt(np.sum(raw * raw, axis=1))
        h = raw / np.maximum(norms, 1e-12)[:, None]
    cache = ForwardCache(
        x, enc_cache, layer_cache, raw, norms, norm_adj.source_fingerprint, model.version, id(model)
    )
    return ForwardResult(h, cache)


@dataclass
class TargetSet:
    mask: np.ndarray
    targets: np.ndarray
    weight: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.int64).reshape(-1)
        self.targets = as_dense(self.targets, "targets") if len(self.mask) else np.zeros((0, 0))
        if self.targets.shape[0] != self.mask.size:
            raise DimensionError(f"{self.mask.size} masked rows but {self.targets.shape[0]} target rows")
        if self.mask.size == 0:
            raise ValidationError(f"target set {self.name!r} has an empty mask")


@dataclass
class TrainTarget:
    sets: list

    def __post_init__(self):
        if not self.sets:
            raise ValidationError("at least one target set is required")

    @property
    def masked_nodes(self):
        return sorted({int(i) for s in self.sets for i in s.mask})


def _check_target(outputs, target: TrainTarget):
    n, d = outputs.shape
    for s in target.sets:
        if s.mask.min() < 0 or s.mask.max() >= n:
            raise ValidationError(f"target set {s.name!r} masks nodes outside 0..{n - 1}")
        if s.targets.shape[1] != d:
            raise DimensionError(f"target set {s.name!r} has dim {s.targets.shape[1]}, outputs have {d}")


def masked_mse(outputs, target: TrainTarget) -> float:
    """Weighted sum over target sets of the mean squared error on their rows."""
    outputs = np.asarray(outputs, dtype=np.float64)
    _check_target(outputs, target)
    total = 0.0
    for s in target.sets:
        diff = outputs[s.mask] - s.targets
        total += s.weight * float(np.mean(diff * diff))
    return total


def masked_mse_grad(outputs, target: TrainTarget) -> np.ndarray:
    outputs = np.asarray(outputs, dtype=np.float64)
    _check_target(outputs, target)
    grad = np.zeros_like(outputs)
    for s in target.sets:
        diff = outputs[s.mask] - s.targets
        np.add.at(grad, s.mask, (2.0 * s.weight / diff.size) * diff)
    return grad


def _check_cache(model, cache, norm_adj):
    if (
        cache.adjacency_fingerprint != norm_adj.source_fingerprint
        or cache.model_version != model.version
        or cache.model_id != id(model)
    ):
        raise ValidationError("stale forward cache: model or adjacency changed since forward()")


def backward_from(model: GcnModel, cache: ForwardCache, norm_adj, upstream):
    """Gradients of every weight matrix given ``dL/d(outputs)``.

    Returned in the order of :meth:`GcnModel.parameters`.
    """
    _check_cache(model, cache, norm_adj)
    g = np.asarray(upstream, dtype=np.float64)
    if model.normalize_outputs:
        safe = np.maximum(cache.output_norms, 1e-12)[:, None]
        y = cache.raw_outputs / safe
        g = (g - y * np.sum(y * g, axis=1, keepdims=True)) / safe
    m = norm_adj.matrix
    grads = []
    n_layers = len(model.layers)
    for idx in range(n_layers - 1, -1, -1):
        layer = model.layers[idx]
        z, pre = cache.layers[idx]
        if layer.apply_activation:
            g = relu_backward(pre, g)
        grads.append(matmul_tn(z, g))
        if idx > 0 or model.encoder_decoder:
            # normalized adjacency is symmetric, so M^T == M
            g = spmm(m, matmul(g, np.ascontiguousarray(layer.weights.T)))
    for idx in range(len(model.encoder_decoder or []) - 1, -1, -1):
        layer = model.encoder_decoder[idx]
        h_in, pre = cache.encoder[idx]
        if layer.apply_activation:
            g = relu_backward(pre, g)
        grads.append(matmul_tn(h_in, g))
        if idx > 0:
            g = matmul(g, np.ascontiguousarray(layer.weights.T))
    grads.reverse()
    return grads


def backward(model: GcnModel, cache: ForwardCache, norm_adj, target: TrainTarget):
    """Exact gradients of :func:`masked_mse` w.r.t. every weight matrix."""
    out = cache.raw_outputs
    if model.normalize_outputs:
        out = out / np.maximum(cache.output_norms, 1e-12)[:, None]
    return backward_from(model, cache, norm_adj, masked_mse_grad(out, target))


# --------------------------------------------------------------------------
# fusion

def fuse_weighted_sum(outputs_list, weights) -> np.ndarray:
    if len(outputs_list) != len(weights):
        raise ValidationError(f"{len(outputs_list)} outputs but {len(weights)} weights")
    if not outputs_list:
        raise ValidationError("nothing to fuse")
    shape = np.shape(outputs_list[0])
    for o in outputs_list:
        if np.shape(o) != shape:
            raise DimensionError(f"cannot sum outputs of shapes {shape} and {np.shape(o)}")
    total = np.zeros(shape)
    for w, o in zip(weights, outputs_list):
        total = total + float(w) * np.asarray(o, dtype=np.float64)
    return total


def fuse_concat(outputs_list, fusion_adj: NormalizedAdjacency, fusion_layer: GcnLayer) -> np.ndarray:
    """One linear graph convolution over the channel-wise concatenation."""
    if not outputs_list:
        raise ValidationError("nothing to fuse")
    rows = {np.shape(o)[0] for o in outputs_list}
    if len(rows) != 1 or rows.pop() != fusion_adj.dim:
        raise DimensionError("fusion inputs must all have one row per graph node")
    stacked = np.hstack([np.asarray(o, dtype=np.float64) for o in outputs_list])
    if stacked.shape[1] != fusion_layer.d_in:
        raise DimensionError(f"concatenated width {stacked.shape[1]} != fusion d_in {fusion_layer.d_in}")
    return matmul(spmm(fusion_adj.matrix, stacked), fusion_layer.weights)


@dataclass
class Branch:
    model: GcnModel
    adjacency: NormalizedAdjacency
    features: np.ndarray


@dataclass
class FusionModel:
    """Several GCN branches whose outputs are concatenated and mixed by one
    linear graph convolution; everything is trained against one loss."""

    branches: list
    fusion_adjacency: NormalizedAdjacency
    fusion_layer: GcnLayer
    version: int = 0

    def parameters(self):
        params = []
        for b in self.branches:
            params.extend(b.model.parameters())
        return params + [self.fusion_layer.weights]

    def set_parameters(self, params):
        pos = 0
        for b in self.branches:
            k = len(b.model.parameters())
            b.model.set_parameters(params[pos : pos + k])
            pos += k
        self.fusion_layer.weights = params[pos]
        self.version += 1

    def forward(self):
        results = [forward(b.model, b.adjacency, b.features) for b in self.branches]
        stacked = np.hstack([r.outputs for r in results])
        mixed = spmm(self.fusion_adjacency.matrix, stacked)
        out = matmul(mixed, self.fusion_layer.weights)
        return out, (results, mixed)

    def gradients(self, cache, upstream):
        results, mixed = cache
        w = self.fusion_layer.weights
        grad_fusion = matmul_tn(mixed, upstream)
        g_stacked = spmm(self.fusion_adjacency.matrix, matmul(upstream, np.ascontiguousarray(w.T)))
        grads, col = [], 0
        for b, r in zip(self.branches, results):
            width = r.outputs.shape[1]
            grads.extend(backward_from(b.model, r.cache, b.adjacency, g_stacked[:, col : col + width]))
            col += width
        return grads + [grad_fusion]


def init_fusion_layer(d_in, d_out, seed) -> GcnLayer:
    return GcnLayer(_glorot(np.random.default_rng(seed), d_in, d_out), apply_activation=False)


# --------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    lr0: float = 0.001
    decay: float = 0.999
    decay_every: int = 100
    epochs: int = 3000
    seed: int = 0
    few_shot_lr_override: float | None = None

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValidationError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.decay_every < 1:
            raise ValidationError("decay_every must be >= 1")

    @property
    def initial_lr(self):
        return self.few_shot_lr_override if self.few_shot_lr_override else self.lr0

    def lr_at(self, epoch):
        """Step schedule: multiply by ``decay`` once per ``decay_every`` epochs."""
        return self.initial_lr * self.decay ** (epoch // self.decay_every)


@dataclass
class TrainResult:
    model: object
    loss_history: list
    lr_history: list = field(default_factory=list)


def _optimize(trainable, evaluate, config: TrainConfig) -> TrainResult:
    params = [p.copy() for p in trainable.parameters()]
    states = [AdamState.zeros_like(p) for p in params]
    losses, lrs = [], []
    for epoch in range(config.epochs):
        loss, grads = evaluate()
        if not np.isfinite(loss):
            raise NumericError(f"loss diverged to {loss!r} at epoch {epoch}")
        lr = config.lr_at(epoch)
        params = [adam_step(p, g, s, lr) for p, g, s in zip(params, grads, states)]
        trainable.set_parameters(params)
        losses.append(loss)
        lrs.append(lr)
    return TrainResult(trainable, losses, lrs)


def _features_of(graph):
    return graph.features if isinstance(graph, KnowledgeGraph) else graph


def train(model: GcnModel, graph, norm_adj, target: TrainTarget, config: TrainConfig) -> TrainResult:
    """Full-batch Adam on :func:`masked_mse`; the input model is not modified.

    ``graph`` is a :class:`KnowledgeGraph` or a plain feature matrix.
    """
    model = copy.deepcopy(model)
    features = as_dense(_features_of(graph), "features")

    def evaluate():
        res = forward(model, norm_adj, features)
        return masked_mse(res.outputs, target), backward(model, res.cache, norm_adj, target)

    return _optimize(model, evaluate, config)


def train_fusion(fusion: FusionModel, target: TrainTarget, config: TrainConfig) -> TrainResult:
    fusion = copy.deepcopy(fusion)

    def evaluate():
        out, cache = fusion.forward()
        return masked_mse(out, target), fusion.gradients(cache, masked_mse_grad(out, target))

    return _optimize(fusion, evaluate, config)


# --------------------------------------------------------------------------
# checkpoints

def model_to_bytes(model: GcnModel, fusion=False) -> bytes:
    flags = (_FLAG_ENCODER if model.encoder_decoder else 0) | (_FLAG_NORMALIZE if model.normalize_outputs else 0)
    flags |= _FLAG_FUSION if fusion else 0
    out = [CHECKPOINT_MAGIC, bytes([CHECKPOINT_VERSION, flags]), struct.pack("<Q", len(model.layers))]
    out += [dense_to_bytes(w) for w in model.parameters()]
    return b"".join(out)


def models_from_bytes(buf: bytes):
    """Decode back-to-back checkpoint records; returns ``[(model, is_fusion)]``."""
    models, pos = [], 0
    while pos < len(buf):
        if buf[pos : pos + 4] != CHECKPOINT_MAGIC:
            raise ValidationError("bad checkpoint magic")
        version, flags = buf[pos + 4], buf[pos + 5]
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack_from("<Q", buf, pos + 6)
        pos += 14
        enc = None
        if flags & _FLAG_ENCODER:
            e, pos = dense_from_bytes(buf, pos)
            d, pos = dense_from_bytes(buf, pos)
            enc = [GcnLayer(e, True), GcnLayer(d, False)]
        layers = []
        for i in range(count):
            w, pos = dense_from_bytes(buf, pos)
            layers.append(GcnLayer(w, apply_activation=(i < count - 1)))
        models.append((GcnModel(layers, enc, bool(flags & _FLAG_NORMALIZE)), bool(flags & _FLAG_FUSION)))
    return models


def write_checkpoint(path, model: GcnModel):
    Path(path).write_bytes(model_to_bytes(model))


def read_checkpoint(path) -> GcnModel:
    models = models_from_bytes(Path(path).read_bytes())
    if len(models) != 1:
        raise ValidationError(f"{path} holds {len(models)} models; use models_from_bytes")
    return models[0][0]


def loss_csv_text(loss_history, lr_history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "lr", "loss"])
    for epoch, (lr, loss) in enumerate(zip(lr_history, loss_history)):
        w.writerow([epoch, repr(lr), repr(loss)])
    return buf.getvalue()


def write_loss_csv(path, result: TrainResult):
    Path(path).write_text(loss_csv_text(result.loss_history, result.lr_history), encoding="utf-8")
