"""Pure-numpy ranking kernels: the fallback backend and the strict-precision paths.

The fast paths shift scores by the list maximum once and work with plain
suffix sums of exp(s - max), which is exact until exp underflows (score
spread beyond ~700 nats). Callers route wider inputs to the ``*_strict``
variants, which run a per-step log-sum-exp chain permutation by permutation.
"""

import numpy as np

# exp(x) underflows to 0.0 below roughly -745; stay clear of it
SAFE_SPREAD = 700.0


def _suffix_sums(values):
    # suffix[i] = values[i] + values[i+1] + ... along axis 1
    return np.cumsum(values[:, ::-1], axis=1)[:, ::-1]


def all_log_probs(scores, perms):
    """Chain log-probability of every permutation in ``perms``.

    ``scores`` is (n,), ``perms`` is (m, n); returns (m,). Row r gets
    sum_i [s[perms[r,i]] - log sum_{k>=i} exp(s[perms[r,k]])].
    """
    s = scores - scores.max()
    es = np.exp(s)
    es_perm = es[perms]
    z = _suffix_sums(es_perm)
    return s[perms].sum(axis=1) - np.log(z).sum(axis=1)


def cross_stats(teacher, student, perms):
    """Entropy of the teacher distribution, cross-entropy against the student,
    and the cross-entropy gradient with respect to the student scores.

    Returns (entropy, ce, grad) where ce = -sum_pi P_t(pi) log P_s(pi) and
    grad[j] = d ce / d student[j], summed over the permutations in ``perms``.
    """
    m, n = perms.shape
    st = teacher - teacher.max()
    ss = student - student.max()
    est = np.exp(st)
    ess = np.exp(ss)
    est_perm = est[perms]
    ess_perm = ess[perms]
    zt = _suffix_sums(est_perm)
    zs = _suffix_sums(ess_perm)
    log_pt = st[perms].sum(axis=1) - np.log(zt).sum(axis=1)
    log_ps = ss[perms].sum(axis=1) - np.log(zs).sum(axis=1)
    pt = np.exp(log_pt)

    entropy = -float(pt @ log_pt)
    ce = -float(pt @ log_ps)

    # d log P_s(pi) / d s_j at position i of pi: 1 - exp(s_j) * sum_{k<=i} 1/zs[k]
    inv_z_cum = np.cumsum(1.0 / zs, axis=1)
    grad_pos = 1.0 - ess_perm * inv_z_cum
    weighted = grad_pos * pt[:, None]
    grad = -np.bincount(perms.ravel(), weights=weighted.ravel(), minlength=n)
    return entropy, ce, grad


def _chain_stats_strict(scores, perm):
    # per-step log-sum-exp chain; robust to arbitrary score spreads
    pos = scores[perm]
    suffix = np.logaddexp.accumulate(pos[::-1])[::-1]
    log_p = float(np.sum(pos - suffix))
    return pos, suffix, log_p


def all_log_probs_strict(scores, perms):
    out = np.empty(perms.shape[0])
    for r in range(perms.shape[0]):
        out[r] = _chain_stats_strict(scores, perms[r])[2]
    return out


def cross_stats_strict(teacher, student, perms):
    m, n = perms.shape
    entropy = 0.0
    ce = 0.0
    grad = np.zeros(n)
    tril = np.tril(np.ones((n, n), dtype=bool))
    for r in range(m):
        perm = perms[r]
        _, _, log_pt = _chain_stats_strict(teacher, perm)
        pos_s, suffix_s, log_ps = _chain_stats_strict(student, perm)
        pt = np.exp(log_pt)
        if pt > 0.0:
            entropy -= pt * log_pt
        ce -= pt * log_ps
        # exp(pos_s[i] - suffix_s[k]) <= 1 for k <= i; mask before exp so the
        # discarded upper triangle cannot overflow
        args = np.where(tril, pos_s[:, None] - suffix_s[None, :], -np.inf)
        grad_pos = 1.0 - np.exp(args).sum(axis=1)
        np.add.at(grad, perm, -pt * grad_pos)
    return entropy, ce, grad
