"""Anomaly scoring on per-point feature vectors.

Two heads feed the scorer: the semantic head's pre-softmax features
drive a cosine-distance score against per-class confidence-weighted
prototypes plus a normalized-entropy score, and the contrastive head's
feature norms drive a hypersphere score that reads small norms as
anomalous.  The fused score is the mean of the two head scores.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .configfile import write_keyvalue
from .errors import FormatError, ValidationError

DEFAULT_NORM_THRESHOLD = 5.0
TENSOR_MAGIC = int.from_bytes(b"FEATBIN1", "little")
_HEADER_BYTES = 24


@dataclass(frozen=True)
class FeatureSet:
    """Per-point features of both heads: (N, C) each, C inlier classes."""

    semantic: np.ndarray
    contrastive: np.ndarray

    def __post_init__(self):
        sem = np.asarray(self.semantic, dtype=np.float64)
        con = np.asarray(self.contrastive, dtype=np.float64)
        if sem.ndim != 2 or con.ndim != 2:
            raise ValidationError("feature matrices must be 2-D (N, C)")
        if sem.shape != con.shape:
            raise ValidationError(
                f"head shapes disagree: semantic {sem.shape} vs contrastive {con.shape}")
        if not (np.isfinite(sem).all() and np.isfinite(con).all()):
            raise ValidationError("features must be finite")
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "contrastive", con)

    @property
    def count(self) -> int:
        return self.semantic.shape[0]

    @property
    def num_classes(self) -> int:
        return self.semantic.shape[1]


@dataclass(frozen=True)
class PrototypeBank:
    """Per-class prototypes (C, C) with their accumulated confidence mass.

    A class whose accumulated weight is zero never saw a true positive
    and counts as uninitialized.
    """

    prototypes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        protos = np.asarray(self.prototypes, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if protos.ndim != 2 or w.shape != (protos.shape[0],):
            raise ValidationError("prototype bank needs (C, D) prototypes and (C,) weights")
        if not np.isfinite(protos).all():
            raise ValidationError("prototypes must be finite")
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "weights", w)

    @property
    def initialized(self) -> np.ndarray:
        return self.weights > 0

    @property
    def fully_initialized(self) -> bool:
        return bool(self.initialized.all())

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]


def accumulate_prototypes(features: np.ndarray, labels: np.ndarray,
                          predictions: np.ndarray,
                          confidences: np.ndarray | None = None) -> PrototypeBank:
    """Confidence-weighted mean of true-positive features per class.

    The confidence of a point defaults to the maximum component of its
    feature vector.  If any true positive of a class has non-positive
    confidence, the class's confidences are shifted by their minimum
    plus a small epsilon so the weighting stays well defined (a warning
    is emitted).  Classes without true positives are left uninitialized.
    """
    f = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if f.ndim != 2:
        raise ValidationError("features must be (N, C)")
    if labels.shape != (f.shape[0],) or predictions.shape != (f.shape[0],):
        raise ValidationError("labels and predictions must be (N,)")
    n_classes = f.shape[1]
    kappa = f.max(axis=1) if confidences is None else np.asarray(confidences, dtype=np.float64)

    prototypes = np.zeros((n_classes, n_classes))
    weights = np.zeros(n_classes)
    for c in range(n_classes):
        tp = (labels == c) & (predictions == c)
        if not tp.any():
            continue
        k = kappa[tp]
        if (k <= 0).any():
            warnings.warn(
                f"class {c}: non-positive confidence encountered; "
                "shifting weights by the class minimum")
            k = k - k.min() + 1e-6
        weights[c] = k.sum()
        prototypes[c] = (k[:, None] * f[tp]).sum(axis=0) / weights[c]
    return PrototypeBank(prototypes=prototypes, weights=weights)


def _unit_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(mat, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    return mat / safe[:, None], zero


@dataclass(frozen=True)
class ClassificationResult:
    predictions: np.ndarray   # (N,) argmax class, ties to the smaller id
    similarity: np.ndarray    # (N, C)
    degenerate: np.ndarray    # (N,) zero-norm feature vectors


def classify(features: np.ndarray, bank: PrototypeBank,
             metric: str = "cosine") -> ClassificationResult:
    """Predict the inlier class by similarity to each prototype.

    metric "cosine" (default) compares unit-normalized vectors, which
    bounds similarities by 1; "dot" uses the raw inner product and is
    kept for ablation.  Zero-norm feature vectors get all-zero
    similarity and are flagged.
    """
    f = np.asarray(features, dtype=np.float64)
    if not bank.fully_initialized:
        missing = np.flatnonzero(~bank.initialized).tolist()
        raise ValidationError(f"prototype bank has uninitialized classes: {missing}")
    if metric == "cosine":
        fu, zero = _unit_rows(f)
        pu, _ = _unit_rows(bank.prototypes)
        sim = fu @ pu.T
        sim[zero] = 0.0
    elif metric == "dot":
        zero = np.linalg.norm(f, axis=1) == 0
        sim = f @ bank.prototypes.T
        sim[zero] = 0.0
    else:
        raise ValidationError(f"unknown similarity metric {metric!r}")
    return ClassificationResult(predictions=np.argmax(sim, axis=1),
                                similarity=sim, degenerate=zero)


def score_cosine(similarity: np.ndarray) -> np.ndarray:
    """Distance to the best-matching prototype: 1 - max similarity.

    Clamped to [0, 1]: a point whose best cosine is negative is already
    maximally anomalous, and raw inner products (ablation metric) can
    leave [0, 1] in both directions.
    """
    return np.clip(1.0 - np.max(np.asarray(similarity, dtype=np.float64), axis=1), 0.0, 1.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def score_entropy(features: np.ndarray) -> np.ndarray:
    """Normalized Shannon entropy of the per-point softmax, in [0, 1]."""
    f = np.asarray(features, dtype=np.float64)
    n_classes = f.shape[1]
    if n_classes < 2:
        raise ValidationError(f"entropy undefined for C<2 (got C={n_classes})")
    p = softmax(f)
    plogp = np.where(p > 0, p * np.log(p), 0.0)
    return -plogp.sum(axis=1) / np.log(n_classes)


def score_semantic(cosine_score: np.ndarray, entropy_score: np.ndarray) -> np.ndarray:
    """Product of the two semantic-head scores, normalized by the
    per-scan maximum (identity when the maximum is zero)."""
    product = np.asarray(cosine_score, dtype=np.float64) * np.asarray(entropy_score, dtype=np.float64)
    peak = product.max() if product.size else 0.0
    return product / peak if peak > 0 else product


def score_contrastive(features: np.ndarray,
                      radius: float = DEFAULT_NORM_THRESHOLD) -> np.ndarray:
    """Hypersphere score: 1 at zero feature norm, 0 once the squared
    norm reaches the radius."""
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    f = np.asarray(features, dtype=np.float64)
    sq = np.einsum("ij,ij->i", f, f)
    return np.maximum(0.0, 1.0 - sq / radius)


def score_fused(semantic_score: np.ndarray, contrastive_score: np.ndarray) -> np.ndarray:
    return 0.5 * (np.asarray(semantic_score, dtype=np.float64)
                  + np.asarray(contrastive_score, dtype=np.float64))


@dataclass(frozen=True)
class ScoreVector:
    """All per-point anomaly scores of one scan, each in [0, 1]."""

    cosine: np.ndarray
    entropy: np.ndarray
    semantic: np.ndarray
    contrastive: np.ndarray
    fused: np.ndarray
    predictions: np.ndarray
    semantic_peak: float    # per-scan max used to normalize the semantic score

    def by_name(self, name: str) -> np.ndarray:
        try:
            return {"cos": self.cosine, "ent": self.entropy, "sem": self.semantic,
                    "cont": self.contrastive, "fused": self.fused}[name]
        except KeyError:
            raise ValidationError(f"unknown score name {name!r}") from None


def compute_scores(features: FeatureSet, bank: PrototypeBank,
                   radius: float = DEFAULT_NORM_THRESHOLD,
                   metric: str = "cosine") -> ScoreVector:
    """Run the full scoring path on one scan's features."""
    result = classify(features.semantic, bank, metric=metric)
    s_cos = score_cosine(result.similarity)
    s_ent = score_entropy(features.semantic)
    product = s_cos * s_ent
    peak = float(product.max()) if product.size else 0.0
    s_sem = product / peak if peak > 0 else product
    s_cont = score_contrastive(features.contrastive, radius=radius)
    return ScoreVector(
        cosine=s_cos, entropy=s_ent, semantic=s_sem, contrastive=s_cont,
        fused=score_fused(s_sem, s_cont), predictions=result.predictions,
        semantic_peak=peak,
    )


def write_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    """Write a 2-D float32 tensor: header (magic, N, C as little-endian
    uint64) followed by row-major float32 values."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 2:
        raise ValidationError(f"tensor must be 2-D, got shape {arr.shape}")
    header = np.array([TENSOR_MAGIC, arr.shape[0], arr.shape[1]], dtype="<u8")
    Path(path).write_bytes(header.tobytes() + arr.tobytes())


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_BYTES:
        raise FormatError(f"{path}: too short for a tensor header ({len(raw)} bytes)")
    magic, rows, cols = np.frombuffer(raw[:_HEADER_BYTES], dtype="<u8")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{int(magic):016x}")
    expected = _HEADER_BYTES + int(rows) * int(cols) * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for a {rows}x{cols} tensor, got {len(raw)}")
    return np.frombuffer(raw[_HEADER_BYTES:], dtype="<f4").reshape(int(rows), int(cols))


def write_scores(path_base: str | os.PathLike, scores: ScoreVector,
                 which: str = "fused") -> None:
    """Write one score channel as raw float32 plus a text sidecar with
    the per-scan normalization peak."""
    base = Path(path_base)
    values = scores.by_name(which).astype("<f4")
    base.with_suffix(".scores").write_bytes(values.tobytes())
    write_keyvalue(base.with_suffix(".scores.meta"), {
        "score": which,
        "count": values.shape[0],
        "semantic_peak": f"{scores.semantic_peak:.12g}",
    })


def read_scores(path: str | os.PathLike) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<f4").astype(np.float64)
