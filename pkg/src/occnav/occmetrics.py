"""Occupancy losses and codebook quantization as plain reference computations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import DomainError, check_binary, check_finite, check_nonnegative, check_same_shape

# Logit magnitude used when a hard 0/1 prediction stands in for logits:
# correct voxels then sit exactly on the hinge margin.
HARD_LOGIT = 1.0


def iou(pred, gt) -> float:
    """|pred & gt| / |pred | gt|, or 1 when both are empty."""
    p = check_binary("pred", pred).astype(bool)
    g = check_binary("gt", gt).astype(bool)
    check_same_shape(p, g)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def bce(logits, gt) -> float:
    """Mean binary cross entropy on logits, in the overflow-free softplus form."""
    o = check_finite("logits", np.asarray(logits, float))
    y = check_binary("gt", gt).astype(float)
    check_same_shape(o, y)
    if o.size == 0:
        raise DomainError("empty grid")
    return float(np.mean(np.maximum(o, 0) - o * y + np.log1p(np.exp(-np.abs(o)))))


def bce_grad(logits, gt) -> np.ndarray:
    o = np.asarray(logits, float)
    y = np.asarray(gt, float)
    return (0.5 * (1 + np.tanh(0.5 * o)) - y) / o.size


def _jaccard_steps(gt_sorted: np.ndarray) -> np.ndarray:
    """Increments of the Jaccard loss as errors are added in sorted order."""
    gts = gt_sorted.sum()
    inter = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jac = 1.0 - inter / union
    jac[1:] = jac[1:] - jac[:-1]
    return jac


def lovasz_hinge(logits, gt):
    """Binary Lovász hinge loss and its gradient with respect to the logits.

    Labels enter the hinge as signs 2y - 1.  The sort order is held fixed for
    the gradient (ties broken by original index).  A grid with no positives has
    a degenerate Jaccard term and returns loss 0 with a zero gradient.
    """
    o = check_finite("logits", np.asarray(logits, float))
    y = check_binary("gt", gt).astype(float)
    check_same_shape(o, y)
    shape = o.shape
    o = o.reshape(-1)
    y = y.reshape(-1)
    grad = np.zeros_like(o)
    if o.size == 0 or not y.any():
        return 0.0, grad.reshape(shape)
    signs = 2.0 * y - 1.0
    errors = 1.0 - o * signs
    perm = np.argsort(-errors, kind="stable")
    e = errors[perm]
    g = _jaccard_steps(y[perm])
    active = e > 0
    loss = float(np.dot(np.where(active, e, 0.0), g))
    grad[perm] = np.where(active, -signs[perm] * g, 0.0)
    return loss, grad.reshape(shape)


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 1.0
    lambda_l: float = 1.0
    lambda_vq: float = 1.0

    def __post_init__(self):
        for name in ("lambda_c", "lambda_l", "lambda_vq"):
            check_nonnegative(name, getattr(self, name))


def tokenizer_loss(bce_val: float, lovasz_val: float, vq_val: float, w: LossWeights = LossWeights()) -> float:
    return w.lambda_c * bce_val + w.lambda_l * lovasz_val + w.lambda_vq * vq_val


def _codebook(codebook) -> np.ndarray:
    C = np.asarray(codebook, float)
    if C.size == 0:
        raise DomainError("codebook is empty")
    if C.ndim != 2:
        raise DomainError("codebook must be a (K, d) array of equal-dimension entries")
    return C


def vq_quantize(vectors, codebook, chunk: int = 4096):
    """Nearest codebook entry per vector (lower index on ties).

    Returns ``(indices, quantized, commitment)`` where commitment is the mean
    over vectors of the squared distance to the selected entry.
    """
    C = _codebook(codebook)
    X = np.atleast_2d(np.asarray(vectors, float))
    if X.shape[1] != C.shape[1]:
        raise DomainError(f"vector dimension {X.shape[1]} does not match codebook dimension {C.shape[1]}")
    idx = np.empty(len(X), np.int64)
    best = np.empty(len(X))
    for i in range(0, len(X), chunk):
        # explicit differences keep exact ties exact
        d2 = ((X[i : i + chunk, None, :] - C[None, :, :]) ** 2).sum(axis=-1)
        k = np.argmin(d2, axis=1)
        idx[i : i + chunk] = k
        best[i : i + chunk] = d2[np.arange(len(k)), k]
    commit = float(best.mean()) if len(X) else 0.0
    return idx, C[idx], commit


class VectorQuantizer(TransformerMixin, BaseEstimator):
    """Fixed-codebook quantizer; ``predict`` gives indices, ``transform`` the entries."""

    def __init__(self, codebook=None):
        self.codebook = codebook

    def fit(self, X=None, y=None):
        self.codebook_ = _codebook(self.codebook)
        return self

    def _fitted(self):
        if not hasattr(self, "codebook_"):
            raise DomainError("VectorQuantizer is not fitted")
        return self.codebook_

    def predict(self, X):
        return vq_quantize(X, self._fitted())[0]

    def transform(self, X):
        return vq_quantize(X, self._fitted())[1]

    def commitment(self, X) -> float:
        return vq_quantize(X, self._fitted())[2]


def occupancy_report(pred, gt, logits=None) -> dict:
    """IoU, BCE and Lovász hinge for one prediction.

    Without logits the binary prediction is mapped to +/-HARD_LOGIT.
    """
    g = check_binary("gt", gt)
    if logits is None:
        p = check_binary("pred", pred)
        logits = np.where(p > 0, HARD_LOGIT, -HARD_LOGIT)
    else:
        logits = np.asarray(logits, float)
        check_same_shape(logits, g)
        p = (logits > 0).astype(np.uint8)
    return {"iou": iou(p, g), "bce": bce(logits, g), "lovasz": lovasz_hinge(logits, g)[0]}
