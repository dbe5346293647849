"""Classifier banks and per-sample feature sets, plus their file formats."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DimensionError, ValidationError
from ..numerics import DENSE_MAGIC, as_dense, dense_from_bytes, dense_to_bytes


class BankSource(enum.Enum):
    INGESTED = "ingested"
    CLOSED_FORM = "closed_form"


@dataclass(frozen=True)
class ClassifierBank:
    """Classifier weight rows keyed by class id."""

    class_ids: tuple
    weights: np.ndarray
    source: BankSource = BankSource.INGESTED

    def __post_init__(self):
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        object.__setattr__(self, "weights", as_dense(self.weights, "classifier bank"))
        if len(self.class_ids) != self.weights.shape[0]:
            raise DimensionError(f"{len(self.class_ids)} ids for {self.weights.shape[0]} rows")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValidationError("classifier bank has duplicate class ids")

    @property
    def dim(self):
        return self.weights.shape[1]

    def __contains__(self, class_id):
        return class_id in self._index

    @property
    def _index(self):
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {c: i for i, c in enumerate(self.class_ids)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def row(self, class_id):
        try:
            return self.weights[self._index[class_id]]
        except KeyError:
            raise ValidationError(f"classifier bank has no row for {class_id!r}") from None

    def rows(self, class_ids):
        return np.vstack([self.row(c) for c in class_ids]) if class_ids else np.zeros((0, self.dim))


@dataclass(frozen=True)
class FeatureSet:
    """Per-sample feature vectors; each sample has one or more labels."""

    sample_ids: tuple
    features: np.ndarray
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "labels", tuple(tuple(lab) for lab in self.labels))
        object.__setattr__(self, "features", as_dense(self.features, "features"))
        n = len(self.sample_ids)
        if self.features.shape[0] != n or len(self.labels) != n:
            raise DimensionError(
                f"{n} sample ids, {self.features.shape[0]} feature rows, {len(self.labels)} label sets"
            )

    def __len__(self):
        return len(self.sample_ids)

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        idx = list(indices)
        return FeatureSet(
            tuple(self.sample_ids[i] for i in idx),
            self.features[idx] if idx else np.zeros((0, self.dim)),
            tuple(self.labels[i] for i in idx),
        )

    def restrict_labels(self, allowed):
        """Drop labels outside ``allowed`` and samples left with none."""
        allowed = set(allowed)
        keep, labels = [], []
        for i, labs in enumerate(self.labels):
            kept = tuple(lab for lab in labs if lab in allowed)
            if kept:
                keep.append(i)
                labels.append(kept)
        sub = self.subset(keep)
        return FeatureSet(sub.sample_ids, sub.features, tuple(labels))

    def by_class(self):
        out = {}
        for i, labs in enumerate(self.labels):
            for lab in labs:
                out.setdefault(lab, []).append(i)
        return out

    def class_means(self, classes):
        groups = self.by_class()
        missing = [c for c in classes if c not in groups]
        if missing:
            raise ValidationError(f"no samples for classes {missing[:5]}")
        return np.vstack([self.features[groups[c]].mean(axis=0) for c in classes])


# --------------------------------------------------------------------------
# text formats

def _parse_header(line, kind, path):
    parts = line.split()
    if len(parts) != 3 or parts[0] != kind:
        raise ValidationError(f"{path}: expected header '{kind} <count> <dim>'")
    return int(parts[1]), int(parts[2])


def _vec(text, dim, path, lineno):
    vals = text.split()
    if len(vals) != dim:
        raise DimensionError(f"{path}:{lineno}: expected {dim} values, got {len(vals)}")
    return [float(v) for v in vals]


def bank_text(bank: ClassifierBank) -> str:
    lines = [f"bank {len(bank.class_ids)} {bank.dim}"]
    for cid, row in zip(bank.class_ids, bank.weights):
        lines.append(cid + "\t" + " ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def write_bank_text(path, bank: ClassifierBank):
    Path(path).write_text(bank_text(bank), encoding="utf-8")


def read_bank(path, source=BankSource.INGESTED) -> ClassifierBank:
    """Read a bank in either the text or the binary format."""
    raw = Path(path).read_bytes()
    if raw[:4] == DENSE_MAGIC:
        return bank_from_bytes(raw, source)
    return read_bank_text(path, source)


def read_bank_text(path, source=BankSource.INGESTED) -> ClassifierBank:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty classifier bank file")
    count, dim = _parse_header(lines[0], "bank", path)
    if len(lines) - 1 != count:
        raise ValidationError(f"{path}: header says {count} rows, found {len(lines) - 1}")
    ids, rows = [], []
    for lineno, ln in enumerate(lines[1:], 2):
        cid, sep, rest = ln.partition("\t")
        if not sep:
            raise ValidationError(f"{path}:{lineno}: expected 'class_id<TAB>values'")
        ids.append(cid)
        rows.append(_vec(rest, dim, path, lineno))
    return ClassifierBank(tuple(ids), np.array(rows, dtype=np.float64).reshape(count, dim), source)


def bank_to_bytes(bank: ClassifierBank) -> bytes:
    out = [dense_to_bytes(bank.weights), struct.pack("<Q", len(bank.class_ids))]
    for cid in bank.class_ids:
        raw = cid.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    return b"".join(out)


def bank_from_bytes(buf, source=BankSource.INGESTED) -> ClassifierBank:
    weights, pos = dense_from_bytes(buf)
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    ids = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        ids.append(buf[pos + 4 : pos + 4 + n].decode("utf-8"))
        pos += 4 + n
    return ClassifierBank(tuple(ids), weights, source)


def features_text(fs: FeatureSet) -> str:
    lines = [f"features {len(fs)} {fs.dim}"]
    for sid, labs, row in zip(fs.sample_ids, fs.labels, fs.features):
        if any("," in lab or "\t" in lab for lab in labs):
            raise ValidationError(f"sample {sid!r}: labels may not contain commas or tabs")
        lines.append(f"{sid}\t{','.join(labs)}\t" + " ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def write_features_text(path, fs: FeatureSet):
    Path(path).write_text(features_text(fs), encoding="utf-8")


def read_features_text(path) -> FeatureSet:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty feature file")
    count, dim = _parse_header(lines[0], "features", path)
    if len(lines) - 1 != count:
        raise ValidationError(f"{path}: header says {count} samples, found {len(lines) - 1}")
    ids, labels, rows = [], [], []
    for lineno, ln in enumerate(lines[1:], 2):
        parts = ln.split("\t")
        if len(parts) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 'sample_id<TAB>labels<TAB>values'")
        ids.append(parts[0])
        labels.append(tuple(lab for lab in parts[1].split(",") if lab))
        rows.append(_vec(parts[2], dim, path, lineno))
    return FeatureSet(tuple(ids), np.array(rows, dtype=np.float64).reshape(count, dim), tuple(labels))
