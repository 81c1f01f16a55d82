"""Plackett-Luce permutation model over similarity scores and the listwise losses.

A score list s assigns each candidate a log-strength; the probability of an
ordering pi (best first, 0-based candidate indices) is the sequential-softmax
product

    P(pi | s) = prod_i exp(s[pi[i]]) / sum_{k >= i} exp(s[pi[k]])

All evaluation is done in log space. Losses return a LossResult carrying the
scalar value and the analytic gradient with respect to the student/model
scores; gradients are validated against central finite differences in the
test suite.
"""

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .exceptions import CapacityError, InputError
from .types import EmbeddingBatch, LossResult, embedding_rows

# 8 candidates -> 8! = 40320 permutations, the practical exhaustive bound
DEFAULT_ENUMERATION_CAP = 8

# below this distance the beta < 2 score gradient is clamped to zero
COINCIDENT_DISTANCE = 1e-12


@dataclass(frozen=True)
class ScoreParams:
    """Scale (alpha) and contrast exponent (beta) of the distance-to-score map."""

    alpha: float = 3.0
    beta: float = 3.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InputError(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise InputError(f"beta must be positive, got {self.beta}")


def as_scores(scores) -> np.ndarray:
    """Validate and return a score list as a float64 vector."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise InputError("scores must be a 1-D vector of length >= 1")
    if not np.all(np.isfinite(arr)):
        raise InputError("scores must be finite")
    return arr


def as_permutation(perm, n: int) -> np.ndarray:
    """Validate that ``perm`` is a bijection on {0..n-1} and return it as intp."""
    arr = np.asarray(perm, dtype=np.intp)
    if arr.shape != (n,):
        raise InputError(f"permutation must have length {n}")
    seen = np.zeros(n, dtype=bool)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise InputError("permutation entries must lie in [0, n)")
    seen[arr] = True
    if not seen.all():
        raise InputError("permutation must visit every index exactly once")
    return arr


@lru_cache(maxsize=None)
def _all_permutations(n: int) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    perms.setflags(write=False)
    return perms


def score(query, candidate, params: ScoreParams) -> float:
    """Similarity score -alpha * ||q - x||^beta; 0 iff the points coincide."""
    q = np.asarray(query, dtype=np.float64)
    x = np.asarray(candidate, dtype=np.float64)
    if q.shape != x.shape or q.ndim != 1:
        raise InputError("query and candidate must be vectors of equal dimension")
    dist = float(np.linalg.norm(q - x))
    return -params.alpha * dist**params.beta


@dataclass
class ScoreBatch:
    """Scores of all candidates against the batch query plus backprop context."""

    scores: np.ndarray       # (n-1,)
    diffs: np.ndarray        # (n-1, d) query - candidate
    distances: np.ndarray    # (n-1,)
    params: ScoreParams

    def backprop(self, score_grad) -> np.ndarray:
        """Chain upstream d(loss)/d(score) back to the embedding rows.

        Returns an (n, d) matrix: row 0 is the query gradient, rows 1..n-1 the
        candidate gradients. Uses dS/dx = alpha*beta*||q-x||^(beta-2)*(q-x)
        (and the negated expression for the query); at coincident points with
        beta < 2 the gradient is defined as zero.
        """
        g = np.asarray(score_grad, dtype=np.float64)
        if g.shape != self.scores.shape:
            raise InputError("score_grad must match the candidate count")
        alpha, beta = self.params.alpha, self.params.beta
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = alpha * beta * self.distances ** (beta - 2.0)
            contrib = (g * coef)[:, None] * self.diffs
        if beta < 2.0:
            contrib[self.distances < COINCIDENT_DISTANCE] = 0.0
        grads = np.empty((self.scores.size + 1, self.diffs.shape[1]))
        grads[0] = -contrib.sum(axis=0)
        grads[1:] = contrib
        return grads


def batch_scores(batch, params: ScoreParams) -> ScoreBatch:
    """Score rows 1..n-1 of a batch against the row-0 query.

    Accepts an EmbeddingBatch or a raw (n, d) matrix with n >= 2.
    """
    rows = embedding_rows(batch)
    if rows.shape[0] < 2:
        raise InputError("batch needs a query row plus at least one candidate")
    diffs = rows[0] - rows[1:]
    dists = np.linalg.norm(diffs, axis=1)
    scores = -params.alpha * dists**params.beta
    return ScoreBatch(scores=scores, diffs=diffs, distances=dists, params=params)


def _chain_suffix(scores: np.ndarray, perm: np.ndarray):
    # log-sum-exp over each suffix of the permuted scores (log-space chain)
    pos = scores[perm]
    suffix = np.logaddexp.accumulate(pos[::-1])[::-1]
    return pos, suffix


def perm_log_prob(scores, perm) -> float:
    """log P(perm | scores) under the Plackett-Luce model."""
    s = as_scores(scores)
    p = as_permutation(perm, s.size)
    pos, suffix = _chain_suffix(s, p)
    return float(np.sum(pos - suffix))


def _log_prob_and_grad(s: np.ndarray, p: np.ndarray):
    pos, suffix = _chain_suffix(s, p)
    log_p = float(np.sum(pos - suffix))
    n = s.size
    # d log P / d s_j for j = perm[i]: 1 - sum_{k <= i} exp(s_j - suffix[k]);
    # every kept exponent is <= 0 because s_j belongs to suffix k, and the
    # discarded upper triangle is masked before exp so it cannot overflow
    tril = np.tril(np.ones((n, n), dtype=bool))
    args = np.where(tril, pos[:, None] - suffix[None, :], -np.inf)
    grad_pos = 1.0 - np.exp(args).sum(axis=1)
    grad = np.empty(n)
    grad[p] = grad_pos
    return log_p, grad


def perm_log_prob_grad(scores, perm) -> np.ndarray:
    """Gradient of log P(perm | scores) with respect to every score entry.

    Entries always sum to zero (shift invariance of the model).
    """
    s = as_scores(scores)
    p = as_permutation(perm, s.size)
    return _log_prob_and_grad(s, p)[1]


def best_permutation(scores) -> np.ndarray:
    """Most probable ordering: indices by descending score, ties by index."""
    s = as_scores(scores)
    return np.argsort(-s, kind="stable")


def _check_pair(teacher, student):
    t = as_scores(teacher)
    s = as_scores(student)
    if t.size != s.size:
        raise InputError(f"score lists differ in length: {t.size} vs {s.size}")
    return t, s


def _needs_strict(*score_lists) -> bool:
    return any(arr.max() - arr.min() > _kernels.SAFE_SPREAD for arr in score_lists)


def soft_darkrank_loss(teacher_scores, student_scores,
                       cap: int = DEFAULT_ENUMERATION_CAP) -> LossResult:
    """KL divergence from the teacher to the student permutation distribution.

    Enumerates all n! orderings, so n must stay at or below ``cap``; longer
    lists raise CapacityError and should use hard_darkrank_loss instead. The
    teacher is a constant: the gradient is with respect to student scores.
    """
    t, s = _check_pair(teacher_scores, student_scores)
    n = t.size
    if n > cap:
        raise CapacityError(
            f"soft transfer enumerates n! permutations and is capped at n={cap} "
            f"(got n={n}); use hard_darkrank_loss for longer lists")
    perms = _all_permutations(n)
    if _needs_strict(t, s):
        entropy, ce, grad = _kernels.cross_stats_strict(t, s, perms)
    else:
        entropy, ce, grad = _kernels.cross_stats(t, s, perms)
    return LossResult(value=max(0.0, ce - entropy), grad=grad)


def listnet_loss(truth_scores, model_scores,
                 cap: int = DEFAULT_ENUMERATION_CAP) -> LossResult:
    """Cross-entropy -sum_pi P(pi|truth) log P(pi|model) over all permutations.

    Equals soft_darkrank_loss plus the (constant) entropy of the truth
    distribution; same enumeration cap applies.
    """
    t, s = _check_pair(truth_scores, model_scores)
    n = t.size
    if n > cap:
        raise CapacityError(
            f"listnet enumerates n! permutations and is capped at n={cap} (got n={n})")
    perms = _all_permutations(n)
    if _needs_strict(t, s):
        _, ce, grad = _kernels.cross_stats_strict(t, s, perms)
    else:
        _, ce, grad = _kernels.cross_stats(t, s, perms)
    return LossResult(value=ce, grad=grad)


def hard_darkrank_loss(teacher_scores, student_scores) -> LossResult:
    """Negative student log-likelihood of the teacher's most probable ordering.

    Evaluates a single chain, so any list length is fine.
    """
    t, s = _check_pair(teacher_scores, student_scores)
    target = best_permutation(t)
    log_p, grad = _log_prob_and_grad(s, target)
    return LossResult(value=-log_p, grad=-grad)


def listmle_loss(ground_truth, model_scores) -> LossResult:
    """Negative log-likelihood of a given ground-truth ordering."""
    s = as_scores(model_scores)
    p = as_permutation(ground_truth, s.size)
    log_p, grad = _log_prob_and_grad(s, p)
    return LossResult(value=-log_p, grad=-grad)
