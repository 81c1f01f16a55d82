"""Companion and baseline losses: softened-softmax KD, direct distance match,
embedding regression, triplet, contrastive (verification) and softmax CE.

All return a LossResult whose gradient is taken with respect to the student
side (logits or embeddings); the teacher side is always treated as constant.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .types import LogitsBatch, LossResult, embedding_rows, logit_rows


@dataclass(frozen=True)
class KDParams:
    """Temperature and loss weight for softened-softmax distillation."""

    temperature: float = 4.0
    weight: float = 16.0  # T^2 compensates the 1/T^2 gradient scale

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise InputError(f"temperature must be positive, got {self.temperature}")
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise InputError(f"kd weight must be non-negative, got {self.weight}")


@dataclass(frozen=True)
class MarginParams:
    margin: float = 0.9

    def __post_init__(self):
        if not (np.isfinite(self.margin) and self.margin >= 0):
            raise InputError(f"margin must be non-negative, got {self.margin}")


def _log_softmax(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def kd_loss(teacher, student, params: KDParams) -> LossResult:
    """Sum over samples of KL[softmax(t/T) || softmax(s/T)].

    Gradient with respect to the student logits is (softmax(s/T) - softmax(t/T)) / T
    per row. The T^2 compensation lives in ``params.weight`` and is applied by
    the trainer, not here.
    """
    t = logit_rows(teacher)
    s = logit_rows(student)
    if t.shape != s.shape:
        raise InputError(f"logit shapes differ: {t.shape} vs {s.shape}")
    temp = params.temperature
    log_pt = _log_softmax(t / temp)
    log_ps = _log_softmax(s / temp)
    pt = np.exp(log_pt)
    value = float((pt * (log_pt - log_ps)).sum())
    grad = (np.exp(log_ps) - pt) / temp
    return LossResult(value=max(0.0, value), grad=grad)


def direct_match_loss(teacher_batch, student_batch) -> LossResult:
    """Squared error between student and teacher query-candidate squared distances.

    Embedding dimensions may differ between the two networks; only the batch
    sizes must agree. Gradient is with respect to the student embeddings, with
    the query gradient accumulated in row 0.
    """
    t = embedding_rows(teacher_batch)
    s = embedding_rows(student_batch)
    if t.shape[0] != s.shape[0]:
        raise InputError(f"batch sizes differ: {t.shape[0]} vs {s.shape[0]}")
    if t.shape[0] < 2:
        raise InputError("need a query row plus at least one candidate")
    dt = ((t[1:] - t[0]) ** 2).sum(axis=1)
    diffs_s = s[1:] - s[0]
    ds = (diffs_s**2).sum(axis=1)
    resid = ds - dt
    value = float((resid**2).sum())
    grad = np.zeros_like(s)
    contrib = (4.0 * resid)[:, None] * diffs_s
    grad[1:] = contrib
    grad[0] = -contrib.sum(axis=0)
    return LossResult(value=value, grad=grad)


def fitnet_loss(teacher_batch, student_batch) -> LossResult:
    """Direct L2 regression of student embeddings onto teacher embeddings."""
    t = embedding_rows(teacher_batch)
    s = embedding_rows(student_batch)
    if t.shape != s.shape:
        raise InputError(f"embedding shapes differ: {t.shape} vs {s.shape}")
    diff = s - t
    return LossResult(value=float((diff**2).sum()), grad=2.0 * diff)


def triplet_loss(anchor, positive, negative, params: MarginParams) -> LossResult:
    """Hinge on squared distances: max(0, ||a-p||^2 - ||a-n||^2 + margin).

    Gradient rows are stacked (anchor, positive, negative); all zero when the
    hinge is satisfied.
    """
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    n = np.asarray(negative, dtype=np.float64)
    if not (a.shape == p.shape == n.shape) or a.ndim != 1:
        raise InputError("anchor, positive and negative must share one dimension")
    ap = a - p
    an = a - n
    value = float((ap**2).sum() - (an**2).sum() + params.margin)
    grad = np.zeros((3, a.size))
    if value > 0.0:
        grad[0] = 2.0 * (ap - an)
        grad[1] = -2.0 * ap
        grad[2] = 2.0 * an
        return LossResult(value=value, grad=grad)
    return LossResult(value=0.0, grad=grad)


def contrastive_loss(a, b, same_identity: bool, params: MarginParams) -> LossResult:
    """Verification loss: ||a-b||^2 for positives, max(0, margin - ||a-b||)^2
    for negatives. Gradient rows are stacked (a, b)."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise InputError("pair members must be vectors of equal dimension")
    diff = va - vb
    grad = np.zeros((2, va.size))
    if same_identity:
        value = float((diff**2).sum())
        grad[0] = 2.0 * diff
        grad[1] = -2.0 * diff
        return LossResult(value=value, grad=grad)
    dist = float(np.linalg.norm(diff))
    gap = params.margin - dist
    if gap <= 0.0:
        return LossResult(value=0.0, grad=grad)
    value = gap * gap
    if dist > 1e-12:  # direction undefined at coincident points; keep subgradient 0
        scale = -2.0 * gap / dist
        grad[0] = scale * diff
        grad[1] = -scale * diff
    return LossResult(value=value, grad=grad)


def softmax_ce_loss(logits_batch) -> LossResult:
    """Mean softmax cross-entropy; gradient (softmax - onehot) / batch_size."""
    if isinstance(logits_batch, LogitsBatch):
        rows, labels = logits_batch.logits, logits_batch.labels
    else:
        raise InputError("softmax_ce_loss requires a LogitsBatch (logits + labels)")
    n = rows.shape[0]
    log_p = _log_softmax(rows)
    value = float(-log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return LossResult(value=value, grad=grad)
