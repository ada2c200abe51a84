import json

import pytest

from sparse_asympt import cinp
from sparse_asympt.cinp import Format, Protocol
from sparse_asympt.interp import random_instance, run
from sparse_asympt.kernels import KernelSpec, kernel
from sparse_asympt.scheduler import (
    PipelineOptions, canon_expr, count_min_depth, empirical_rank, enumerate_groupings, enumerate_nestings,
    enumerate_protocols, enumerate_rewrites, filter_asymptotic, filter_min_depth, insert_reformatting,
    lossless, min_depth_universe, name_workspaces, schedule,
)

from conftest import DATA, load

VEC3 = ("tensor a {I} format (u)\ntensor b {I} format (u)\ntensor c {I} format (u)\n"
        "tensor d {I} format (u)\nforall i: a[i] += b[i] * c[i] * d[i]")


def spec_of(text, name="t"):
    return KernelSpec.from_program(name, cinp.parse(text))


def texts(stmts):
    return {cinp.print_stmt(s.root if isinstance(s, cinp.Program) else s) for s in stmts}


# rewrites and groupings

def test_rewrites_of_triple_product():
    s = spec_of(VEC3)
    rw = enumerate_rewrites(s.rhs)
    assert len(rw) == 12
    assert len({canon_expr(e) for e in rw}) == 1
    # up to commutativity only the choice of grouped pair remains
    assert len({_comm(e) for e in rw}) == 3


def _comm(e):
    if not isinstance(e, cinp.Call):
        return cinp.print_expr(e)
    return (e.op.value, *sorted(map(_comm, e.args), key=str))


def test_rewrites_single_access():
    s = spec_of("tensor a {I} format (u)\ntensor b {I} format (u)\nforall i: a[i] += b[i]")
    assert [cinp.print_expr(e) for e in enumerate_rewrites(s.rhs)] == ["b[i]"]


def test_rewrites_include_pipeline_row():
    # products print right-associated, so this is B * (d * C)
    forms = {cinp.print_expr(e): e for e in enumerate_rewrites(kernel("spmv2").rhs)}
    e = forms["B[i, j] * d[k] * C[j, k]"]
    assert cinp.print_expr(e.args[1]) == "d[k] * C[j, k]"


def test_distribution_applies_with_mixed_ops():
    s = spec_of("tensor a {I} format (u)\ntensor b {I} format (u)\ntensor c {I} format (u)\n"
                "tensor d {I} format (u)\nforall i: a[i] += (b[i] + c[i]) * d[i]")
    forms = {cinp.print_expr(e) for e in enumerate_rewrites(s.rhs)}
    assert "b[i] * d[i] + c[i] * d[i]" in forms


def test_groupings_triple_product():
    s = spec_of(VEC3)
    got = texts(enumerate_groupings(s, enumerate_rewrites(s.rhs)))
    assert "a[i] += b[i] * c[i] * d[i]" in got
    assert "(a[i] += b[i] * ~0) where (~0 = c[i] * d[i])" in got
    assert "(a[i] += b[i] * ~0) where (~0 += c[i] * d[i])" in got
    assert len(got) == 7


def test_groupings_single_access():
    s = spec_of("tensor a {I} format (u)\ntensor b {I} format (u)\nforall i: a[i] += b[i]")
    assert texts(enumerate_groupings(s, enumerate_rewrites(s.rhs))) == {"a[i] += b[i]"}


def test_groupings_spmv2_reduction_producer():
    k = kernel("spmv2")
    got = texts(enumerate_groupings(k, enumerate_rewrites(k.rhs)))
    assert "(a[i] += B[i, j] * ~0) where (~0 += C[j, k] * d[k])" in got


# nestings

def _spmv2_nestings():
    k = kernel("spmv2")
    g = [s for s in enumerate_groupings(k, enumerate_rewrites(k.rhs))
         if cinp.print_stmt(s) == "(a[i] += B[i, j] * ~0) where (~0 += C[j, k] * d[k])"]
    return k, enumerate_nestings(g[0], k.indices)


def test_nestings_push_through_where():
    _, n = _spmv2_nestings()
    got = texts(n)
    assert "forall j: (forall i: a[i] += B[i, j] * ~0) where (forall k: ~0 += C[j, k] * d[k])" in got
    # j entering both sides
    assert "(forall i, j: a[i] += B[i, j] * ~0) where (forall j, k: ~0 += C[j, k] * d[k])" in got


def test_nestings_two_indices():
    s = spec_of("tensor a {I} format (u)\ntensor B {I, J} format (u, c)\nforall i, j: a[i] += B[i, j]")
    [g] = enumerate_groupings(s, enumerate_rewrites(s.rhs))
    assert texts(enumerate_nestings(g, s.indices)) == {"forall i, j: a[i] += B[i, j]",
                                                       "forall j, i: a[i] += B[i, j]"}


def test_min_depth():
    _, n = _spmv2_nestings()
    m = filter_min_depth(n)
    assert {cinp.depth(s) for s in m} == {2}
    assert len(m) < len(n)
    assert filter_min_depth(m) == m


def test_naming_ranks():
    k, n = _spmv2_nestings()
    fused = next(s for s in n if cinp.print_stmt(s).startswith("forall j: (forall i"))
    split = next(s for s in n if cinp.print_stmt(s).startswith("(forall i, j:"))
    assert name_workspaces(fused, k).decl("w").rank == 0
    p = name_workspaces(split, k)
    assert p.decl("w").dims == ("J",)
    assert "w[j] += C[j, k] * d[k]" in str(p)


def test_naming_drops_rank_two_in_taco_mode():
    k = kernel("sddmm")
    g = [s for s in enumerate_groupings(k, enumerate_rewrites(k.rhs))
         if cinp.print_stmt(s) == "(A[i, j] += D[i, j] * ~0) where (~0 += B[i, k] * C[k, j])"][0]
    two = [s for s in enumerate_nestings(g, k.indices)
           if (p := name_workspaces(s, k)) is not None and p.decl("w").rank == 2]
    assert two and all(name_workspaces(s, k, taco=True) is None for s in two)


# protocols

def test_protocols_pipeline_row():
    p = load("spmv2_final")
    unprotocolized = cinp.parse(str(p).replace("[a ", "[").replace("[l ", "[").replace(", s ", ", ")
                                .replace("[s ", "[").replace(", l ", ", "))
    got = {str(q) for q in enumerate_protocols(unprotocolized)}
    assert str(p) in got


def test_protocols_dense_vector_locate():
    s = spec_of("tensor a {I} format (u)\ntensor b {I} format (u)\nforall i: a[i] += b[i]")
    p = cinp.make_program(s.decls, cinp.Forall(("i",), cinp.Assign(s.lhs, s.op, s.rhs)))
    [q] = enumerate_protocols(p)
    assert "b[l i]" in str(q)


def test_taco_read_options_bound():
    p = cinp.parse("tensor A {I, J} format (u, c)\ntensor B {I, J} format (c, c)\ntensor C {I, J} format (c, c)\n"
                   "forall i, j: A[i, j] = B[i, j] * C[i, j]")
    assert len(enumerate_protocols(p, taco=True)) <= 3 ** 2


def test_write_protocols_follow_order():
    k = kernel("spgemm")
    for p in [q.program for q in filter_asymptotic(min_depth_universe(k, PipelineOptions()))]:
        loops = p.root.vars
        w = next(a for a, w in cinp.stmt_accesses(p.root) if w)
        first = w.indices[0].protocol
        assert first is (Protocol.APPEND if loops[0] == "i" else Protocol.INSERT)


# reformatting

def test_prefix_workspace_matches_displayed_program():
    text = (DATA / "spgemm_gustavson.cinp").read_text().replace("(c, h)", "(c, c)")
    assert insert_reformatting(cinp.parse(text)) == load("spgemm_gustavson_ws")


def test_concordant_program_unchanged():
    p = load("spgemm_gustavson_ws")
    assert insert_reformatting(p) == p


def test_transpose_inserted():
    p = cinp.parse((DATA / "spgemm_inner.cinp").read_text().replace(" order (2, 1)", ""))
    q = insert_reformatting(p)
    assert "(forall j, k: C'[a k, a j] = C[s k, s j])" in str(q)
    assert q.decl("C'").mode_order == (1, 0)


# whole pipeline

def _same_output(p, ref, seeds=(0, 1, 2), n=6, rho=0.4):
    for s in seeds:
        inputs, sizes = random_instance(ref, n, rho, s)
        want = run(ref, inputs, sizes, strict=False)[0]
        got = run(p, inputs, sizes, strict=False)[0]
        if got[next(iter(want))].entries() != want[next(iter(want))].entries():
            return False
    return True


@pytest.mark.parametrize("name", ["spmv", "spgemm"])
@pytest.mark.parametrize("taco", [False, True])
def test_semantics_preserved(name, taco):
    k = kernel(name)
    # the reference has no protocols, so every loop is dense
    ref = k.reference()
    res = schedule(k, PipelineOptions(taco=taco))
    for c in res.frontier.members:
        assert _same_output(c.program, ref), str(c.program)
    for p in res.final:
        assert cinp.validate(p) == []
        assert _same_output(p, ref), str(p)


@pytest.mark.parametrize("name", ["spmv", "spgemm", "spmv2", "sddmm"])
def test_taco_structure(name):
    res = schedule(kernel(name), PipelineOptions(taco=True))
    assert res.final
    for p in res.final:
        outer, internal = [], []

        def walk(node, top):
            if isinstance(node, cinp.Where):
                (outer if top else internal).append(cinp.result_tensor(node.producer))
                walk(node.consumer, top)
                walk(node.producer, False)
            elif isinstance(node, cinp.Forall):
                walk(node.body, False)

        walk(p.root, True)
        assert len(internal) <= 1
        for w in internal:
            d = p.decl(w)
            assert d.rank <= 1 and Format.HASH not in d.formats


def test_monotone_filters():
    res = schedule(kernel("spmv2"), PipelineOptions())
    t = res.trace
    assert t.count("min_depth") <= t.count("nestings")
    assert t.count("asymptotic") <= t.count("protocols")
    assert t.count("reformat") <= t.count("asymptotic")


def test_deterministic():
    a = schedule(kernel("spmv2"), PipelineOptions(taco=True, empirical=True, dims=8, density=0.2))
    b = schedule(kernel("spmv2"), PipelineOptions(taco=True, empirical=True, dims=8, density=0.2))

    def strip(r):
        d = r.to_json()
        for s in d["stages"]:
            s.pop("seconds")
        d["report"].pop("mean_filter_seconds")
        return json.dumps(d, sort_keys=True)

    assert strip(a) == strip(b)


@pytest.mark.parametrize("name", ["spmv", "spgemm", "spmv2"])
@pytest.mark.parametrize("taco", [False, True])
def test_count_matches_materialized(name, taco):
    k = kernel(name)
    assert count_min_depth(k, taco) == len(min_depth_universe(k, PipelineOptions(taco=taco)))


def test_spmv2_final_row_in_frontier():
    res = schedule(kernel("spmv2"), PipelineOptions())
    want = load("spmv2_final")
    assert str(want) in {str(p) for p in res.final}


def test_empirical_rank_orders_by_tasks():
    res = schedule(kernel("spmv2"), PipelineOptions(empirical=True, dims=32, density=0.1))
    counts = [n for _, n in res.ranked]
    assert counts == sorted(counts) and len(counts) == len(res.final)
    [(only, n)] = empirical_rank(res.final[:1], PipelineOptions(dims=8, density=0.1))
    assert only is res.final[0] and n > 0


def test_max_candidates_guard():
    res = schedule(kernel("spmv2"), PipelineOptions(max_stage_programs=3))
    assert any(s["truncated"] for s in res.trace.stages)
    assert all(s["count"] <= 3 for s in res.trace.stages if s["stage"] not in ("nestings",))
    with pytest.raises(ValueError):
        PipelineOptions(max_stage_programs=0)


def test_sddmm_fused_in_frontier():
    res = schedule(kernel("sddmm"), PipelineOptions(taco=True))
    assert any(not cinp.workspaces(c.program.root) for c in res.frontier.members)


def test_lossless_filter_drops_lossy_sums():
    head = "tensor a {I} format (u)\ntensor b {I} format (c)\ntensor c {I} format (u)\n"
    lossy = cinp.parse(head + "forall i: a[a i] = b[s i] + c[l i]")
    ref = cinp.parse(head + "forall i: a[i] = b[i] + c[i]")
    assert not lossless(lossy)
    inputs, sizes = random_instance(ref, 8, 0.5, 1)
    assert run(lossy, inputs, sizes)[0]["a"].entries() != run(ref, inputs, sizes, strict=False)[0]["a"].entries()
    assert str(lossy) not in {str(q) for q in enumerate_protocols(ref)}
