# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled permutation-enumeration kernels.

Same contract as _reference.py's fast paths: scores are shifted by their
maximum once, then each permutation is evaluated with plain suffix sums of
exp(s - max). Callers handle score spreads beyond the underflow range.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def all_log_probs(const double[::1] scores, const cnp.intp_t[:, ::1] perms):
    cdef Py_ssize_t m = perms.shape[0]
    cdef Py_ssize_t n = perms.shape[1]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(m)
    cdef double[::1] out_v = out
    cdef double[::1] s = np.empty(n)
    cdef double[::1] es = np.empty(n)
    cdef double[::1] suffix = np.empty(n)
    cdef double smax, z, logp
    cdef Py_ssize_t r, i, j

    smax = scores[0]
    for i in range(1, n):
        if scores[i] > smax:
            smax = scores[i]
    for i in range(n):
        s[i] = scores[i] - smax
        es[i] = exp(s[i])

    for r in range(m):
        z = 0.0
        for i in range(n - 1, -1, -1):
            z += es[perms[r, i]]
            suffix[i] = z
        logp = 0.0
        for i in range(n):
            logp += s[perms[r, i]] - log(suffix[i])
        out_v[r] = logp
    return out


def cross_stats(const double[::1] teacher, const double[::1] student, const cnp.intp_t[:, ::1] perms):
    cdef Py_ssize_t m = perms.shape[0]
    cdef Py_ssize_t n = perms.shape[1]
    cdef double[::1] st = np.empty(n)
    cdef double[::1] ss = np.empty(n)
    cdef double[::1] est = np.empty(n)
    cdef double[::1] ess = np.empty(n)
    cdef double[::1] zt = np.empty(n)
    cdef double[::1] zs = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] grad = np.zeros(n)
    cdef double[::1] grad_v = grad
    cdef double tmax, smax, acc_t, acc_s, log_pt, log_ps, pt, inv_z, entropy, ce
    cdef Py_ssize_t r, i, j

    tmax = teacher[0]
    smax = student[0]
    for i in range(1, n):
        if teacher[i] > tmax:
            tmax = teacher[i]
        if student[i] > smax:
            smax = student[i]
    for i in range(n):
        st[i] = teacher[i] - tmax
        ss[i] = student[i] - smax
        est[i] = exp(st[i])
        ess[i] = exp(ss[i])

    entropy = 0.0
    ce = 0.0
    for r in range(m):
        acc_t = 0.0
        acc_s = 0.0
        for i in range(n - 1, -1, -1):
            j = perms[r, i]
            acc_t += est[j]
            acc_s += ess[j]
            zt[i] = acc_t
            zs[i] = acc_s
        log_pt = 0.0
        log_ps = 0.0
        for i in range(n):
            j = perms[r, i]
            log_pt += st[j] - log(zt[i])
            log_ps += ss[j] - log(zs[i])
        pt = exp(log_pt)
        entropy -= pt * log_pt
        ce -= pt * log_ps
        # d log P_s / d s_j at position i: 1 - exp(s_j) * sum_{k<=i} 1/zs[k]
        inv_z = 0.0
        for i in range(n):
            j = perms[r, i]
            inv_z += 1.0 / zs[i]
            grad_v[j] -= pt * (1.0 - ess[j] * inv_z)
    return entropy, ce, grad
