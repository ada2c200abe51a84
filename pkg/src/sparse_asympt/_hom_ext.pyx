# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled homomorphism search; same contract as ``_hom_py.find_hom``."""

from libc.stdlib cimport malloc, free


cdef struct Ctx:
    int nq
    int nclauses
    int np_head
    int nq_head
    int *h
    int *trail
    int ntrail
    int *used
    int *p_head
    int *p_dims
    int *q_head
    int *q_dims
    int *q_cl_off
    int *q_cl_args
    int *cand_off
    int *cand
    int *p_cl_off
    int *p_cl_args


cdef bint match_clauses(Ctx *c, int ci) nogil:
    cdef int a0, a1, k, pc, b0, mark, t, qv, pv, cur
    cdef bint ok
    if ci == c.nclauses:
        return True
    a0 = c.q_cl_off[ci]
    a1 = c.q_cl_off[ci + 1]
    for k in range(c.cand_off[ci], c.cand_off[ci + 1]):
        pc = c.cand[k]
        b0 = c.p_cl_off[pc]
        mark = c.ntrail
        ok = True
        for t in range(a1 - a0):
            qv = c.q_cl_args[a0 + t]
            pv = c.p_cl_args[b0 + t]
            cur = c.h[qv]
            if cur == -1:
                if c.q_dims[qv] != c.p_dims[pv]:
                    ok = False
                    break
                c.h[qv] = pv
                c.trail[c.ntrail] = qv
                c.ntrail += 1
            elif cur != pv:
                ok = False
                break
        if ok and match_clauses(c, ci + 1):
            return True
        while c.ntrail > mark:
            c.ntrail -= 1
            c.h[c.trail[c.ntrail]] = -1
    return False


cdef bint match_heads(Ctx *c, int n) nogil:
    cdef int pv, qi, qv
    if n == c.np_head:
        return match_clauses(c, 0)
    pv = c.p_head[n]
    for qi in range(c.nq_head):
        qv = c.q_head[qi]
        if not c.used[qi] and c.q_dims[qv] == c.p_dims[pv]:
            c.used[qi] = 1
            c.h[qv] = pv
            if match_heads(c, n + 1):
                return True
            c.used[qi] = 0
            c.h[qv] = -1
    return False


cdef int *to_c(list xs) except NULL:
    cdef int n = len(xs)
    cdef int *out = <int *> malloc((n + 1) * sizeof(int))
    cdef int i
    if out == NULL:
        raise MemoryError()
    for i in range(n):
        out[i] = xs[i]
    return out


def find_hom(p_head, p_dims, q_head, q_dims, q_cl_off, q_cl_args,
             cand_off, cand, p_cl_off, p_cl_args, bint strict):
    cdef Ctx c
    cdef int i, qv, pv
    cdef bint found = False
    c.nq = len(q_dims)
    c.nclauses = len(q_cl_off) - 1
    c.np_head = len(p_head)
    c.nq_head = len(q_head)
    c.ntrail = 0
    c.h = to_c([-1] * c.nq)
    c.trail = to_c([0] * (c.nq + 1))
    c.used = to_c([0] * (c.nq_head + 1))
    c.p_head = to_c(list(p_head))
    c.p_dims = to_c(list(p_dims))
    c.q_head = to_c(list(q_head))
    c.q_dims = to_c(list(q_dims))
    c.q_cl_off = to_c(list(q_cl_off))
    c.q_cl_args = to_c(list(q_cl_args))
    c.cand_off = to_c(list(cand_off))
    c.cand = to_c(list(cand))
    c.p_cl_off = to_c(list(p_cl_off))
    c.p_cl_args = to_c(list(p_cl_args))
    try:
        if strict:
            if c.np_head == c.nq_head:
                found = True
                for i in range(c.nq_head):
                    qv = c.q_head[i]
                    pv = c.p_head[i]
                    if c.q_dims[qv] != c.p_dims[pv]:
                        found = False
                        break
                    c.h[qv] = pv
                if found:
                    found = match_clauses(&c, 0)
        else:
            found = match_heads(&c, 0)
        if not found:
            return None
        out = [c.h[i] for i in range(c.nq)]
    finally:
        free(c.h); free(c.trail); free(c.used); free(c.p_head); free(c.p_dims)
        free(c.q_head); free(c.q_dims); free(c.q_cl_off); free(c.q_cl_args)
        free(c.cand_off); free(c.cand); free(c.p_cl_off); free(c.p_cl_args)
    for qv in range(len(out)):
        if out[qv] == -1:
            for pv in range(len(p_dims)):
                if p_dims[pv] == q_dims[qv]:
                    out[qv] = pv
                    break
    return out
