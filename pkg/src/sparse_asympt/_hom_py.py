"""Pure-Python homomorphism search (fallback for the compiled ``_hom_ext``).

Both implementations share one flat, integer-only calling convention so that
``hom.py`` can swap them freely:

``p_head``/``q_head``
    variable ids of the two heads.
``p_dims``/``q_dims``
    dimension id of every variable, indexed by variable id.
``q_cl_off``/``q_cl_args``
    arguments of clause ``c`` of Q are ``q_cl_args[q_cl_off[c]:q_cl_off[c + 1]]``.
``cand_off``/``cand``
    indices of the P clauses sharing a predicate with Q clause ``c``.
``p_cl_off``/``p_cl_args``
    arguments of the P clauses, laid out like Q's.

The result maps every Q variable id to a P variable id (or -1 when the
variable is unconstrained and has no same-dimension target), or is ``None``.
"""


def find_hom(p_head, p_dims, q_head, q_dims, q_cl_off, q_cl_args,
             cand_off, cand, p_cl_off, p_cl_args, strict):
    nq = len(q_dims)
    nclauses = len(q_cl_off) - 1
    h = [-1] * nq
    trail = []

    def clauses(c):
        if c == nclauses:
            return True
        a0, a1 = q_cl_off[c], q_cl_off[c + 1]
        for k in range(cand_off[c], cand_off[c + 1]):
            pc = cand[k]
            b0 = p_cl_off[pc]
            mark = len(trail)
            ok = True
            for t in range(a1 - a0):
                qv = q_cl_args[a0 + t]
                pv = p_cl_args[b0 + t]
                cur = h[qv]
                if cur == -1:
                    if q_dims[qv] != p_dims[pv]:
                        ok = False
                        break
                    h[qv] = pv
                    trail.append(qv)
                elif cur != pv:
                    ok = False
                    break
            if ok and clauses(c + 1):
                return True
            while len(trail) > mark:
                h[trail.pop()] = -1
        return False

    if strict:
        if len(p_head) != len(q_head):
            return None
        for qv, pv in zip(q_head, p_head):
            if q_dims[qv] != p_dims[pv]:
                return None
            h[qv] = pv
        return _complete(h, p_dims, q_dims) if clauses(0) else None

    used = [False] * len(q_head)

    def heads(n):
        if n == len(p_head):
            return clauses(0)
        pv = p_head[n]
        for qi in range(len(q_head)):
            qv = q_head[qi]
            if not used[qi] and q_dims[qv] == p_dims[pv]:
                used[qi] = True
                h[qv] = pv
                if heads(n + 1):
                    return True
                used[qi] = False
                h[qv] = -1
        return False

    return _complete(h, p_dims, q_dims) if heads(0) else None


def _complete(h, p_dims, q_dims):
    # unconstrained head variables of Q: any same-dimension target will do
    for qv in range(len(h)):
        if h[qv] == -1:
            for pv in range(len(p_dims)):
                if p_dims[pv] == q_dims[qv]:
                    h[qv] = pv
                    break
    return list(h)
