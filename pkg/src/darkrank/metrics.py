"""Retrieval and clustering evaluation: CMC Rank-k, mAP, Recall@1, pairwise F1,
NMI, and the k-means clustering they need."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, NumericalError

logger = logging.getLogger("darkrank.metrics")

KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6


@dataclass
class RetrievalResult:
    """Per-query ranked gallery with same-identity flags, best match first."""

    rankings: list  # per query: np.ndarray of gallery indices
    matches: list   # per query: np.ndarray of bools aligned with rankings

    def __post_init__(self):
        if len(self.rankings) != len(self.matches):
            raise InputError("rankings and matches must pair up per query")
        for rank, match in zip(self.rankings, self.matches):
            if len(rank) == 0:
                raise InputError("every query needs a non-empty gallery")
            if len(rank) != len(match):
                raise InputError("ranking and match flags must align")


@dataclass
class ClusteringResult:
    """A candidate cluster assignment paired with the ground-truth classes."""

    assignment: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment)
        self.classes = np.asarray(self.classes)
        if self.assignment.shape != self.classes.shape or self.assignment.ndim != 1:
            raise InputError("assignment and classes must be equal-length vectors")


def retrieval_from_embeddings(embeddings, labels) -> RetrievalResult:
    """Leave-one-out retrieval: each sample queries all the others.

    Gallery order is ascending Euclidean distance, ties broken by index.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    n = emb.shape[0]
    if n < 2:
        raise InputError("need at least two samples for leave-one-out retrieval")
    sq = (emb**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (emb @ emb.T)
    rankings, matches = [], []
    for i in range(n):
        gallery = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        order = gallery[np.argsort(d2[i, gallery], kind="stable")]
        rankings.append(order)
        matches.append(lab[order] == lab[i])
    return RetrievalResult(rankings=rankings, matches=matches)


def cmc_rank_k(result: RetrievalResult, k: int) -> float:
    """Fraction of queries with a same-identity hit in the top k."""
    if k < 1:
        raise InputError("k must be >= 1")
    hits = [bool(m[:k].any()) for m in result.matches]
    return float(np.mean(hits))


def recall_at_1(result: RetrievalResult) -> float:
    """Fraction of queries whose nearest neighbour shares their category."""
    return cmc_rank_k(result, 1)


def mean_average_precision(result: RetrievalResult) -> float:
    """Mean over queries of average precision across relevant positions.

    Queries with no relevant gallery item are excluded (a warning reports how
    many); see :func:`queries_without_relevant`.
    """
    aps = []
    skipped = 0
    for match in result.matches:
        rel = np.flatnonzero(match)
        if rel.size == 0:
            skipped += 1
            continue
        ranks = rel + 1.0
        precisions = np.arange(1, rel.size + 1) / ranks
        aps.append(precisions.mean())
    if skipped:
        logger.warning("mAP excluded %d queries with no relevant gallery item", skipped)
    if not aps:
        raise InputError("no query has any relevant gallery item")
    return float(np.mean(aps))


def queries_without_relevant(result: RetrievalResult) -> int:
    return sum(1 for m in result.matches if not m.any())


def _pair_counts(labels: np.ndarray) -> float:
    _, counts = np.unique(labels, return_counts=True)
    return float((counts * (counts - 1) / 2).sum())


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    return table


def f1_score(clustering: ClusteringResult) -> float:
    """Pairwise F1: precision/recall over same-cluster vs same-class pairs."""
    pred, truth = clustering.assignment, clustering.classes
    if pred.size < 2:
        raise InputError("pairwise F1 needs at least two samples")
    table = _contingency(pred, truth)
    tp = float((table * (table - 1) / 2).sum())
    pred_pairs = _pair_counts(pred)
    true_pairs = _pair_counts(truth)
    precision = tp / pred_pairs if pred_pairs > 0 else 0.0
    recall = tp / true_pairs if true_pairs > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _entropy(counts: np.ndarray, n: float) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(clustering: ClusteringResult) -> float:
    """Normalized mutual information 2 I(A, B) / (H(A) + H(B)), natural logs."""
    pred, truth = clustering.assignment, clustering.classes
    n = float(pred.size)
    if n < 1:
        raise InputError("empty clustering")
    table = _contingency(pred, truth)
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    h_a = _entropy(a, n)
    h_b = _entropy(b, n)
    if h_a + h_b == 0.0:
        # both partitions are a single cluster; identical by construction
        if np.all(pred == pred[0]) and np.all(truth == truth[0]):
            return 1.0
        raise NumericalError("NMI denominator is zero for non-identical partitions")
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(a, b)[nz] / (n * n)
    mi = float((pij * np.log(pij / outer)).sum())
    return 2.0 * mi / (h_a + h_b)


@dataclass
class KMeansRun:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list = field(default_factory=list)


def _plus_plus_centers(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(embeddings, k: int, seed: int) -> KMeansRun:
    """Lloyd's algorithm with k-means++ seeding; deterministic under ``seed``.

    Runs at most 300 iterations, stopping when no centroid moves more than
    1e-6. Empty clusters are re-seeded at the point farthest from its center.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or k > n:
        raise InputError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centers = _plus_plus_centers(x, k, rng)
    history = []
    labels = np.zeros(n, dtype=np.intp)
    n_iter = 0
    for n_iter in range(1, KMEANS_MAX_ITER + 1):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), labels]
        history.append(float(point_d2.sum()))
        new_centers = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
            else:
                new_centers[j] = x[point_d2.argmax()]
        shift = float(np.linalg.norm(new_centers - centers, axis=1).max())
        centers = new_centers
        if shift < KMEANS_TOL:
            break
    return KMeansRun(labels=labels, centers=centers, inertia=history[-1],
                     n_iter=n_iter, inertia_history=history)


def evaluate_embeddings(embeddings, labels, seed: int = 0) -> dict:
    """All retrieval and clustering metrics for one embedded split."""
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    result = retrieval_from_embeddings(emb, lab)
    n_clusters = int(np.unique(lab).size)
    run = kmeans(emb, n_clusters, seed)
    clustering = ClusteringResult(assignment=run.labels, classes=lab)
    return {
        "rank_1": cmc_rank_k(result, 1),
        "rank_5": cmc_rank_k(result, 5),
        "rank_10": cmc_rank_k(result, 10),
        "mAP": mean_average_precision(result),
        "recall_at_1": recall_at_1(result),
        "f1": f1_score(clustering),
        "nmi": nmi(clustering),
        "map_excluded_queries": queries_without_relevant(result),
    }
