import itertools

import pytest
from hypothesis import assume, given, settings, strategies as st

from sparse_asympt import cinp
from sparse_asympt.queries import (
    And, Atom, Clause, CostOrdering, EMPTY, Exists, Or, TaskSet, Var,
    all_patterns, brute_contained, brute_contained_literal, compare, cq_contained, default_context,
    equivalent, eval_expansion, eval_taskset_full, evaluate, free_vars, make_cq, normalize, parse_taskset,
    simplify, taskset, ucq_contained,
)

from strategies import ALL_VARS, SIGNATURES, SIZES, cqs, patterns, tasksets

i = Var("i", "I")
j, j2 = Var("j", "J"), Var("j2", "J")
k, k1 = Var("k", "K"), Var("k1", "K")
SZ = {"I": 2, "J": 2, "K": 2}


def cq(head, *clauses):
    return make_cq(head, [Clause(p, args) for p, args in clauses])


def ts(*cqs_):
    return taskset(cqs_)


# normalize

def test_normalize_distributes_or():
    t = normalize([i, j], Or((Atom("B", (i, j)), Atom("C", (i, j)))))
    assert t == ts(cq([i, j], ("B", (i, j))), cq([i, j], ("C", (i, j))))


def test_normalize_inner_k_loop():
    t = normalize([i, j, k], Or((Atom("B", (i, k)), Atom("C", (k, j)))))
    assert len(t) == 2
    assert str(t) == "{[i:I, j:J, k:K] | B(i,k)} + {[i:I, j:J, k:K] | C(k,j)}"


def test_normalize_hoists_exists_with_fresh_names():
    body = Exists((k,), And((Atom("B", (i, k)), Or((Atom("C", (k,)), Atom("D", (k,)))))))
    t = normalize([i], body)
    assert len(t) == 2
    for d in t.disjuncts:
        assert d.head == (i,) and len(d.quantified) == 1
    sig = {"B": ("I", "K"), "C": ("K",), "D": ("K",)}
    for pats in all_patterns(sig, SZ):
        direct = {(x,) for x in range(2) if evaluate(body, {i: x}, pats, SZ)}
        assert direct == eval_taskset_full(t, pats, SZ)


@given(patterns(), st.lists(st.sampled_from(ALL_VARS), unique=True, max_size=3))
@settings(max_examples=200)
def test_normalize_preserves_extension(body, extra):
    head = sorted(free_vars(body) | set(extra), key=lambda v: v.name)
    t = normalize(head, body)
    sig = {p: SIGNATURES[p] for p in SIGNATURES}
    for n, pats in enumerate(all_patterns(sig, SIZES)):
        if n % 97:
            continue
        direct = set()
        for vals in itertools.product(range(2), repeat=len(head)):
            if evaluate(body, dict(zip(head, vals)), pats, SIZES):
                direct.add(vals)
        assert direct == eval_taskset_full(t, pats, SIZES)


# containment

def test_lazy_head_containment():
    p = cq([j, i], ("A", (i, j, k)))
    q = cq([i, j, k], ("A", (i, j, k)))
    h = cq_contained(p, q)
    assert h is not None
    assert cq_contained(p, q, strict=True) is None


def test_reflexive_identity_witness():
    p = cq([i, j], ("B", (i, k)), ("C", (k, j)))
    h = cq_contained(p, p)
    assert h is not None and all(a == b for a, b in h.mapping)


def test_missing_clause_blocks_containment():
    p = cq([i, j, k], ("B", (i, k)), ("C", (k, j)))
    assert cq_contained(p, cq([i, j, k], ("B", (i, k)))) is not None
    assert cq_contained(cq([i, j, k], ("B", (i, k))), p) is None


def test_empty_union_contained():
    assert ucq_contained(EMPTY, ts(cq([i], ("B", (i,)))))
    assert not ucq_contained(ts(cq([i])), EMPTY)


def test_gustavson_compute_in_inner_k_loop():
    compute = ts(cq([i, k, j], ("B", (i, k)), ("C", (k, j))))
    inner_k = normalize([i, j, k], Or((Atom("B", (i, k)), Atom("C", (k, j)))))
    assert ucq_contained(compute, inner_k)
    assert brute_contained(compute, inner_k, SZ)


def test_sddmm_sets():
    fused = ts(cq([i, j, k], ("D", (i, j))), cq([i, j], ("D", (i, j))), cq([i], ("D", (i, j2))))
    unfused = ts(cq([i, j, k]), cq([i, j], ("D", (i, j))), cq([i], ("D", (i, j2))))
    assert ucq_contained(fused, unfused) and not ucq_contained(unfused, fused)
    assert brute_contained(fused, unfused, SZ) and not brute_contained(unfused, fused, SZ)


def test_one_way_containment_brute():
    p = ts(cq([i], ("B", (i,)), ("C", (i,))))
    q = ts(cq([i], ("B", (i,))))
    assert brute_contained_literal(p, q, SZ) and not brute_contained_literal(q, p, SZ)
    assert brute_contained(p, q, SZ) and not brute_contained(q, p, SZ)


def test_brute_guard():
    big = ts(cq([i, j, k], ("X", (i, j, k)), ("Y", (i, j, k))))
    with pytest.raises(ValueError, match="too large"):
        brute_contained(big, big, {"I": 3, "J": 2, "K": 2})


@given(cqs(), cqs())
@settings(max_examples=300)
def test_witnesses_are_valid_homomorphisms(p, q):
    h = cq_contained(p, q)
    if h is None:
        return
    m = h.as_dict()
    for a, b in m.items():
        assert a.dim == b.dim
    p_clauses = set(p.clauses)
    for c in q.clauses:
        assert Clause(c.pred, tuple(m[v] for v in c.args)) in p_clauses
    assert set(p.head) <= {m[v] for v in q.head if v in m}


@given(tasksets(), tasksets())
@settings(max_examples=300)
def test_containment_matches_brute(p, q):
    assert ucq_contained(p, q) == brute_contained(p, q, SIZES)


@given(tasksets(max_clauses=2), tasksets(max_clauses=2))
@settings(max_examples=60)
def test_brute_oracles_agree(p, q):
    sig = {}
    for t in (p, q):
        for d in t.disjuncts:
            for c in d.clauses:
                sig[c.pred] = SIGNATURES[c.pred]
    assume(sum(2 ** len(s) for s in sig.values()) <= 10)
    assert brute_contained(p, q, SIZES) == brute_contained_literal(p, q, SIZES, max_cells=10)


@given(cqs(), cqs(), cqs())
@settings(max_examples=300)
def test_containment_transitive(a, b, c):
    if cq_contained(a, b) and cq_contained(b, c):
        assert cq_contained(a, c) is not None


# simplify and compare

def test_simplify_drops_subsumed_disjunct():
    t = ts(cq([i], ("B", (i,))), cq([i], ("B", (i,)), ("C", (i,))))
    assert simplify(t) == ts(cq([i], ("B", (i,))))


def test_simplify_drops_redundant_clause():
    t = ts(cq([i, k], ("B", (i, k)), ("B", (i, k1))))
    assert simplify(t) == ts(cq([i, k], ("B", (i, k))))


@given(tasksets())
@settings(max_examples=200)
def test_simplify_idempotent_and_equivalent(t):
    s = simplify(t)
    assert simplify(s) == s
    assert equivalent(s, t)


def test_compare_equal_sets():
    t = ts(cq([i, j], ("B", (i, k)), ("C", (k, j))))
    assert compare(t, t) is CostOrdering.EQUIVALENT


@given(tasksets(), tasksets())
@settings(max_examples=200)
def test_compare_antisymmetric(p, q):
    assert compare(p, q) is compare(q, p).flip()


# expansion semantics

def test_expansion_singleton():
    got = eval_expansion(ts(cq([i], ("B", (i,)))), {"B": {(2,)}}, {"I": 3})
    assert got == {(("I", 2),), ()}


def test_expansion_sub_tuples():
    p = ts(cq([i, j], ("A", (i, j, k))))
    got = eval_expansion(p, {"A": {(1, 2, 1)}}, {"I": 3, "J": 3, "K": 3})
    assert got == {(("I", 1), ("J", 2)), (("J", 2), ("I", 1)), (("I", 1),), (("J", 2),), ()}


def test_full_tuple_count_dense_vector():
    t = ts(cq([i, j], ("b", (i,))))
    full = eval_taskset_full(t, {"b": {(x,) for x in range(4)}}, {"I": 4, "J": 3})
    assert len(full) == 12


# default context

def test_default_context_spmv():
    p = cinp.parse("tensor a {I} format (u)\ntensor B {I, J} format (u, c)\ntensor c {J} format (u)\n"
               "forall i, j: a[i] += B[i, j] * c[j]")
    ctx = default_context(p)
    assert str(ctx.sunk) == "{[i:I, j:J] | B(i,j)} + {[i:I] | true} + {[j:J] | true}"
    assert len(ctx.assumptions) == 1 and ctx.assumptions[0][0].pred == "B"


def test_default_context_dense_only():
    p = cinp.parse("tensor a {I} format (u)\ntensor b {I} format (u)\nforall i: a[i] += b[i]")
    ctx = default_context(p)
    assert str(ctx.sunk) == "{[i:I] | true}" and ctx.assumptions == ()


def test_default_context_spgemm(program):
    ctx = default_context(program("spgemm_gustavson"))
    assert len(ctx.sunk) == 5 and len(ctx.assumptions) == 2


# text forms

def test_text_round_trip():
    text = "{[i:I, j:J] | exists k1 . B(i,k1) & C(k1,j)} + {[i:I] | true}"
    t = parse_taskset(text, {"B": ("I", "K"), "C": ("K", "J")})
    assert parse_taskset(str(t), {"B": ("I", "K"), "C": ("K", "J")}) == t


@given(tasksets())
@settings(max_examples=100)
def test_json_round_trip(t):
    assert TaskSet.from_json(t.to_json()) == t
