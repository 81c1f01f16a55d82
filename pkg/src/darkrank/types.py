"""Shared domain containers used across loss, network and trainer modules."""

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError

UNIT_NORM_TOL = 1e-6


@dataclass
class LossResult:
    """Scalar loss plus the gradient with respect to its student-side input.

    The shape of ``grad`` depends on the loss: score-space losses return a
    vector aligned with the score list, embedding losses an (n, d) matrix of
    per-row gradients, logit losses an (n, C) matrix, and the triplet /
    contrastive losses a stack of per-input rows.
    """

    value: float
    grad: np.ndarray


@dataclass
class EmbeddingBatch:
    """A batch of unit-norm embeddings with identity labels; row 0 is the query."""

    embeddings: np.ndarray  # (n, d), rows unit L2 norm
    labels: np.ndarray      # (n,) identity indices

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.embeddings.ndim != 2:
            raise InputError("embeddings must be a 2-D matrix")
        if self.labels.shape != (self.embeddings.shape[0],):
            raise InputError("labels must have one entry per embedding row")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if not np.all(np.abs(norms - 1.0) <= UNIT_NORM_TOL):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise InputError(f"embedding rows must be unit-norm (worst deviation {worst:.3g})")

    @property
    def query(self) -> np.ndarray:
        return self.embeddings[0]

    def __len__(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class LogitsBatch:
    """Per-sample class logits with integer labels."""

    logits: np.ndarray  # (n, C)
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.logits.ndim != 2:
            raise InputError("logits must be a 2-D matrix")
        if not np.all(np.isfinite(self.logits)):
            raise InputError("logits must be finite")
        if self.labels.shape != (self.logits.shape[0],):
            raise InputError("labels must have one entry per logit row")
        n_classes = self.logits.shape[1]
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= n_classes):
            raise InputError(f"labels must lie in [0, {n_classes})")

    def __len__(self) -> int:
        return self.logits.shape[0]


def embedding_rows(batch) -> np.ndarray:
    """Accept an EmbeddingBatch or a raw (n, d) array and return the matrix."""
    if isinstance(batch, EmbeddingBatch):
        return batch.embeddings
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError("expected an EmbeddingBatch or a 2-D array")
    return arr


def logit_rows(batch) -> np.ndarray:
    """Accept a LogitsBatch or a raw (n, C) array and return the matrix."""
    if isinstance(batch, LogitsBatch):
        return batch.logits
    arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError("expected a LogitsBatch or a 2-D array")
    return arr
