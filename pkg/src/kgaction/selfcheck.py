"""Fast numerical self-checks run by ``kgaction selfcheck``.

Every check compares a production routine against an independent dense or
brute-force computation on small random instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _accel
from .gcn import TargetSet, TrainTarget, backward, forward, init_model, masked_mse
from .graph import build_bipartite_adjacency, build_fc_adjacency, cosine_similarity, normalize_adjacency
from .numerics import SparseMatrix, finite_difference_grad, spmm
from .pipeline.metrics import mean_average_precision, mean_class_accuracy


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _random_symmetric(rng, n, density=0.4):
    a = np.triu(rng.uniform(0.05, 1.0, size=(n, n)) * (rng.random((n, n)) < density), 1)
    return a + a.T


def check_gradients(seed=0, instances=12, corrupt_layer=None, tol=1e-4) -> CheckResult:
    """Analytic backprop against central differences.

    ``corrupt_layer`` perturbs one layer's analytic gradient so the failure
    path can be exercised.
    """
    rng = np.random.default_rng(seed)
    worst, worst_where = 0.0, ""
    for t in range(instances):
        n = int(rng.integers(2, 7))
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(2, 9, size=depth + 1)]
        adj = normalize_adjacency(SparseMatrix.from_dense(_random_symmetric(rng, n)))
        x = rng.normal(size=(n, dims[0]))
        model = init_model(dims, int(rng.integers(1 << 30)), encoder_decoder=bool(t % 3 == 2),
                           normalize_outputs=bool(t % 2))
        mask = np.sort(rng.choice(n, size=max(1, n // 2), replace=False))
        target = TrainTarget([TargetSet(mask, rng.normal(size=(mask.size, dims[-1])))])
        res = forward(model, adj, x)
        grads = backward(model, res.cache, adj, target)
        params = model.parameters()
        for li, (p, g) in enumerate(zip(params, grads)):
            if corrupt_layer is not None and li == corrupt_layer:
                g = g + 1e-2
            original = [q.copy() for q in params]

            def loss(w, li=li, original=original):
                trial = list(original)
                trial[li] = w
                model.set_parameters(trial)
                return masked_mse(forward(model, adj, x).outputs, target)

            fd = finite_difference_grad(loss, p)
            model.set_parameters(original)
            err = float(np.max(np.abs(fd - g)) / max(1e-8, float(np.max(np.abs(fd)))))
            if err > worst:
                worst, worst_where = err, f"instance {t}, layer {li}"
    ok = worst < tol
    detail = f"max relative error {worst:.3e}" + ("" if ok else f" at {worst_where}")
    return CheckResult("gradient", ok, detail)


def check_sparse(seed=1, instances=20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n, d = int(rng.integers(1, 12)), int(rng.integers(1, 6))
        a = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.3)
        b = rng.normal(size=(n, d))
        got = spmm(SparseMatrix.from_dense(a), b)
        want = np.zeros((n, d))
        for i, j in itertools.product(range(n), range(n)):
            want[i] += a[i, j] * b[j]
        worst = max(worst, float(np.max(np.abs(got - want))) if got.size else 0.0)
    return CheckResult("sparse-vs-dense", worst < 1e-12, f"max abs error {worst:.3e}")


def check_normalization(seed=2, instances=50) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 13))
        a = _random_symmetric(rng, n)
        got = normalize_adjacency(SparseMatrix.from_dense(a)).matrix.to_dense()
        a_hat = a + np.eye(n)
        d = a_hat.sum(axis=1)
        want = a_hat / np.sqrt(np.outer(d, d))
        worst = max(worst, float(np.max(np.abs(got - want))))
    return CheckResult("normalization", worst < 1e-12, f"max abs error {worst:.3e}")


def _oracle_edges(x, top_n):
    n = x.shape[0]
    edges = set()
    for i in range(n):
        cands = [j for j in range(n) if j != i]
        ranked = sorted(cands, key=lambda j: (-round(cosine_similarity(x[i], x[j]), 12), j))
        for j in ranked[:top_n]:
            edges.add((i, j))
            edges.add((j, i))
    return edges


def tie_prone_features(rng, n, d=4):
    """Gaussian rows where some rows repeat earlier ones up to a power-of-two
    scale, which produces exact similarity ties."""
    x = rng.normal(size=(n, d))
    for i in range(1, n):
        if rng.random() < 0.3:
            x[i] = x[int(rng.integers(i))] * 2.0 ** int(rng.integers(-1, 2))
    return x


def check_adjacency(seed=3, instances=50) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(instances):
        n = int(rng.integers(3, 13))
        x = tie_prone_features(rng, n)
        top_n = int(rng.integers(1, min(4, n - 1) + 1))
        got = {(i, j) for i, j, _ in build_fc_adjacency(x, top_n).edges()}
        if got != _oracle_edges(x, top_n):
            bad += 1
        side = rng.random(n) < 0.5
        if side.all() or not side.any():
            side[0] = not side[0]
        k = min(top_n, int(side.sum()), int((~side).sum()))
        bip = build_bipartite_adjacency(x, side, k)
        if any(side[i] == side[j] for i, j, _ in bip.edges()):
            bad += 1
    return CheckResult("adjacency", bad == 0, f"{bad} mismatching instances of {instances}")


def _ap_oracle(scores, positives):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, precisions = 0, []
    for rank, i in enumerate(order, 1):
        if positives[i]:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def check_metrics(seed=4, instances=40) -> CheckResult:
    rng = np.random.default_rng(seed)
    problems = []
    ap = mean_average_precision([[0.9], [0.8], [0.7], [0.1]], [[1], [0], [1], [0]]).overall
    if ap != (1.0 + 2.0 / 3.0) / 2.0:
        problems.append(f"hand AP {ap}")
    acc = mean_class_accuracy(["a", "a", "a", "a"], ["a", "a", "b", "b"]).overall
    if acc != 0.5:
        problems.append(f"hand accuracy {acc}")
    for _ in range(instances):
        n, c = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        scores = rng.integers(0, 3, size=(n, c)).astype(float)
        labels = rng.random((n, c)) < 0.5
        labels[rng.integers(n), :] = True
        want = np.mean([_ap_oracle(scores[:, j].tolist(), labels[:, j].tolist()) for j in range(c)])
        got = mean_average_precision(scores, labels).overall
        if got != want:
            problems.append(f"mAP {got} != {want}")
    return CheckResult("metrics", not problems, "; ".join(problems[:3]) or "all oracles agree")


def check_backends(seed=5) -> CheckResult:
    if not _accel.HAVE_NUMBA:
        return CheckResult("backends", True, "numba unavailable, numpy kernels only")
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(7, 5)), rng.normal(size=(5, 4))
    s = SparseMatrix.from_dense(a[:, :5][:5] * (rng.random((5, 5)) < 0.5))
    same = (
        np.array_equal(_accel.matmul_numpy(a, b), _accel.matmul_numba(a, b))
        and np.array_equal(
            _accel.spmm_numpy(s.row_offsets, s.col_indices, s.values, b),
            _accel.spmm_numba(s.row_offsets, s.col_indices, s.values, b),
        )
        and np.array_equal(_accel.row_norms_numpy(a), _accel.row_norms_numba(a))
    )
    return CheckResult("backends", same, "numba and numpy kernels agree bit for bit" if same else "kernels differ")


def run_all(corrupt_layer=None):
    return [
        check_gradients(corrupt_layer=corrupt_layer),
        check_sparse(),
        check_normalization(),
        check_adjacency(),
        check_metrics(),
        check_backends(),
    ]
