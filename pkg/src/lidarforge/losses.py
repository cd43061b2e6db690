"""Forward values and analytic gradients of the training losses.

Every loss returns ``(value, gradient)`` where the gradient is taken
with respect to the feature argument, so it can be checked against
central finite differences.  No autodiff framework is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scoring import PrototypeBank, softmax


@dataclass(frozen=True)
class LossWeights:
    """Head combination weights and the fixed loss hyperparameters."""

    ce: float = 1.0
    lovasz: float = 1.5
    prototype: float = 0.1
    contrastive: float = 0.5
    objectosphere: float = 0.5
    temperature: float = 0.1
    radius: float = 5.0

    def __post_init__(self):
        for name in ("ce", "lovasz", "prototype", "contrastive", "objectosphere"):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight {name!r} must be non-negative")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.radius <= 0:
            raise ValidationError("radius must be positive")


def _check_features_labels(features, labels):
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if f.ndim != 2:
        raise ValidationError("features must be (N, C)")
    if y.shape != (f.shape[0],):
        raise ValidationError("labels must be (N,)")
    if y.size and (y.min() < 0 or y.max() >= f.shape[1]):
        raise ValidationError("labels must lie in [0, C)")
    return f, y


def loss_ce(features, labels, class_weights=None):
    """Weighted cross-entropy over softmax probabilities.

    value = -(1/N) sum_n w[y_n] * log softmax(f_n)[y_n]
    """
    f, y = _check_features_labels(features, labels)
    n, c = f.shape
    w = np.ones(c) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (c,):
        raise ValidationError(f"class weights must be ({c},)")
    p = softmax(f)
    point_w = w[y]
    # log softmax computed stably from the shifted logits
    shifted = f - f.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    value = -(point_w * log_p[np.arange(n), y]).sum() / n

    grad = p * point_w[:, None]
    grad[np.arange(n), y] -= point_w
    grad /= n
    return float(value), grad


def loss_prototype(features, labels, bank: PrototypeBank | None):
    """Cosine-embedding pull of each feature toward its class prototype.

    value = (1/N) sum_c sum_{p in class c} (1 - cos(prototype_c, f_p))

    Returns (value, gradient, active).  Inactive (zero value, zero
    gradient) when no prototype has been accumulated yet; classes that
    are individually uninitialized are skipped.
    """
    f, y = _check_features_labels(features, labels)
    n = f.shape[0]
    grad = np.zeros_like(f)
    if bank is None or not bank.initialized.any():
        return 0.0, grad, False

    proto = bank.prototypes
    proto_norms = np.linalg.norm(proto, axis=1)
    value = 0.0
    for c in np.unique(y):
        if not bank.initialized[c] or proto_norms[c] == 0:
            continue
        u = proto[c] / proto_norms[c]
        rows = np.flatnonzero(y == c)
        fc = f[rows]
        norms = np.linalg.norm(fc, axis=1)
        ok = norms > 0
        cos = np.zeros(len(rows))
        cos[ok] = (fc[ok] @ u) / norms[ok]
        value += (1.0 - cos).sum()
        # d(1 - cos)/df = -(u - cos * f/|f|) / |f|
        grad[rows[ok]] = -(u[None, :] - cos[ok, None] * fc[ok] / norms[ok, None]) / norms[ok, None]
    return float(value / n), grad / n, True


def _jaccard_extension_grad(fg_sorted: np.ndarray) -> np.ndarray:
    """Gradient vector of the Lovasz extension of the Jaccard loss for a
    descending-error ordering with ground-truth indicator fg_sorted."""
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jaccard = 1.0 - intersection / union
    if fg_sorted.size > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def loss_lovasz(features, labels):
    """Lovasz-softmax: per present class, descending-sorted absolute
    errors dotted with the Jaccard-extension gradient, averaged over
    present classes."""
    f, y = _check_features_labels(features, labels)
    n, _ = f.shape
    p = softmax(f)
    present = np.unique(y)

    value = 0.0
    dloss_dp = np.zeros_like(p)
    for c in present:
        fg = (y == c).astype(np.float64)
        errors = np.abs(fg - p[:, c])
        order = np.argsort(-errors, kind="stable")
        g = _jaccard_extension_grad(fg[order])
        value += errors[order] @ g
        # errors = fg - p on foreground (|1-p| = 1-p), = p elsewhere
        sign = np.where(fg > 0, -1.0, 1.0)
        dloss_dp[order, c] += sign[order] * g
    value /= len(present)
    dloss_dp /= len(present)

    # chain rule through the softmax
    inner = (dloss_dp * p).sum(axis=1, keepdims=True)
    grad = p * (dloss_dp - inner)
    return float(value), grad


def mean_class_features(features, labels, num_classes: int):
    """Per-class mean feature vector; zero rows for absent classes.

    Returns (means (num_classes, D), counts (num_classes,)).
    """
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    means = np.zeros((num_classes, f.shape[1]))
    counts = np.zeros(num_classes, dtype=np.int64)
    for c in range(num_classes):
        rows = y == c
        counts[c] = rows.sum()
        if counts[c]:
            means[c] = f[rows].mean(axis=0)
    return means, counts


def loss_contrastive(mean_features, bank: PrototypeBank, temperature: float,
                     denominator: str = "standard"):
    """Softmax alignment of each class's mean feature with its own
    unit-normalized prototype against all prototypes.

    denominator "standard" sums exp(<mean_c, proto_i>/t) over classes i.
    The "literal" variant repeats the numerator term in the denominator,
    which makes every term log C independent of the features; it is kept
    selectable for comparison only.
    """
    fbar = np.asarray(mean_features, dtype=np.float64)
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    if fbar.ndim != 2 or fbar.shape[0] != bank.num_classes:
        raise ValidationError(
            f"mean features must be ({bank.num_classes}, D), got {fbar.shape}")
    if not bank.fully_initialized:
        missing = np.flatnonzero(~bank.initialized).tolist()
        raise ValidationError(f"prototype bank has uninitialized classes: {missing}")
    if denominator not in ("standard", "literal"):
        raise ValidationError(f"unknown denominator convention {denominator!r}")

    norms = np.linalg.norm(bank.prototypes, axis=1, keepdims=True)
    unit = bank.prototypes / np.where(norms > 0, norms, 1.0)
    c = bank.num_classes

    if denominator == "literal":
        return float(c * np.log(c)), np.zeros_like(fbar)

    logits = (fbar @ unit.T) / temperature           # (C, C): row c vs every prototype
    probs = softmax(logits)
    own = np.arange(c)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    value = float(-log_probs[own, own].sum())

    grad = -(unit - probs @ unit) / temperature      # d(-log p_cc)/d fbar_c
    return value, grad


def loss_objectosphere(features, inlier_mask, radius: float):
    """Push inlier feature norms beyond the hypersphere radius; pull any
    non-inlier norms toward zero.  Mean over all points."""
    f = np.asarray(features, dtype=np.float64)
    mask = np.asarray(inlier_mask, dtype=bool)
    if f.ndim != 2 or mask.shape != (f.shape[0],):
        raise ValidationError("features must be (N, D) with an (N,) inlier mask")
    if radius <= 0:
        raise ValidationError("radius must be positive")
    n = f.shape[0]
    sq = np.einsum("ij,ij->i", f, f)

    penalty = np.where(mask, np.maximum(radius - sq, 0.0), sq)
    value = float(penalty.mean())

    grad = np.zeros_like(f)
    inside = mask & (sq < radius)
    grad[inside] = -2.0 * f[inside] / n
    grad[~mask] = 2.0 * f[~mask] / n
    return value, grad


def loss_heads(ce: float, lovasz: float, prototype: float, contrastive: float,
               objectosphere: float, weights: LossWeights = LossWeights()):
    """Weighted sums per head: (semantic-head loss, contrastive-head loss)."""
    semantic = weights.ce * ce + weights.lovasz * lovasz + weights.prototype * prototype
    head = weights.contrastive * contrastive + weights.objectosphere * objectosphere
    return float(semantic), float(head)
