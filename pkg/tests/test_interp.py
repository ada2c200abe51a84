import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_asympt import cinp
from sparse_asympt.cinp import Format
from sparse_asympt.interp import (
    InterpError, SparseTensor, gen_uniform, random_instance, read_tensor, run, to_pattern, write_tensor,
)

from conftest import load

SIZES = {"I": 2, "J": 2, "K": 2}


def matrices(p, B, C):
    out = {}
    for name, m in (("B", B), ("C", C)):
        d = p.decl(name)
        m = np.asarray(m)
        out[name] = SparseTensor.from_entries(d, m.shape, {tuple(map(int, c)): int(m[tuple(c)])
                                                           for c in np.argwhere(m)})
    return out


@pytest.mark.parametrize("name", ["spgemm_gustavson", "spgemm_gustavson_ws", "spgemm_inner", "spgemm_outer"])
def test_two_by_two_product(name):
    p = load(name)
    out, _ = run(p, matrices(p, [[1, 0], [0, 2]], [[0, 3], [4, 0]]), SIZES)
    assert out["A"].dense().tolist() == [[0, 3], [8, 0]]


def test_inner_products_coiterate_more():
    B, C = [[1, 0], [1, 0]], [[0, 0], [1, 1]]  # B lives in column 0, C in row 1: no k overlap
    gi, gg = load("spgemm_inner"), load("spgemm_gustavson")
    out_i, tr_i = run(gi, matrices(gi, B, C), SIZES)
    out_g, tr_g = run(gg, matrices(gg, B, C), SIZES)
    assert out_i["A"].nnz == out_g["A"].nnz == 0
    assert len(tr_i.coiteration) > len(tr_g.coiteration)


def test_all_zero_input():
    p = load("spgemm_gustavson")
    out, trace = run(p, matrices(p, [[0, 0], [0, 0]], [[1, 1], [1, 1]]), SIZES)
    assert out["A"].nnz == 0
    assert trace.compute == set() and trace.coiteration == set()


def test_gen_uniform_extremes():
    d = cinp.TensorDecl("B", ("I", "J"), (Format.UNCOMPRESSED, Format.COMPRESSED))
    assert gen_uniform(d, {"I": 5, "J": 4}, 0.0).nnz == 0
    assert gen_uniform(d, {"I": 5, "J": 4}, 1.0).nnz == 20
    with pytest.raises(ValueError):
        gen_uniform(d, {"I": 5, "J": 4}, 1.5)


def test_gen_uniform_deterministic():
    d = cinp.TensorDecl("B", ("I", "J"), (Format.COMPRESSED, Format.COMPRESSED))
    a = gen_uniform(d, {"I": 8, "J": 8}, 0.5, seed=7)
    b = gen_uniform(d, {"I": 8, "J": 8}, 0.5, seed=7)
    assert a.entries() == b.entries() and 0 < a.nnz < 64


def test_to_pattern():
    d = cinp.TensorDecl("E", ("I", "I"), (Format.COMPRESSED, Format.COMPRESSED))
    assert to_pattern(SparseTensor.from_entries(d, (3, 3), {})) == set()
    eye = SparseTensor.from_entries(d, (3, 3), {(x, x): 1 for x in range(3)})
    assert to_pattern(eye) == {(0, 0), (1, 1), (2, 2)}


@given(st.integers(0, 1000), st.floats(0, 1))
@settings(max_examples=50)
def test_pattern_popcount(seed, rho):
    d = cinp.TensorDecl("B", ("I", "J"), (Format.HASH, Format.COMPRESSED), (1, 0))
    t = gen_uniform(d, {"I": 4, "J": 5}, rho, seed=seed)
    assert len(to_pattern(t)) == t.nnz


def test_tensor_file_round_trip():
    d = cinp.TensorDecl("B", ("I", "J"), (Format.UNCOMPRESSED, Format.COMPRESSED))
    t = gen_uniform(d, {"I": 4, "J": 3}, 0.5, seed=1)
    text = write_tensor(t)
    assert text.startswith("dims I=4 J=3\n")
    assert read_tensor(text, d).entries() == t.entries()
    with pytest.raises(ValueError, match="duplicate"):
        read_tensor("dims I=4 J=3\n1 1 2\n1 1 3\n", d)


def test_compressed_levels_sorted():
    p = load("spgemm_inner")
    inputs, sizes = random_instance(p, 6, 0.4, 3)
    out, _ = run(p, inputs, sizes)
    A = out["A"]

    def check(node, level):
        if level == A.decl.rank:
            return
        keys = [k for k, _ in node]
        assert keys == sorted(keys)
        for _, child in node:
            check(child, level + 1)

    check(A.root, 0)


def test_append_violation_detected():
    p = cinp.parse("tensor A {I, J} format (c, c)\ntensor B {I, J} format (h, h)\n"
                   "forall j, i: A[a i, a j] = B[l i, l j]")
    inputs, sizes = random_instance(p, 3, 1.0, 0)
    with pytest.raises(InterpError, match="append order violated"):
        run(p, inputs, sizes)


def test_rerun_is_idempotent():
    p = load("spgemm_gustavson_ws")
    inputs, sizes = random_instance(p, 6, 0.4, 11)
    a, ta = run(p, inputs, sizes)
    b, tb = run(p, inputs, sizes)
    assert a["A"].entries() == b["A"].entries()
    assert ta.compute == tb.compute and ta.coiteration == tb.coiteration


@given(st.sampled_from([Format.UNCOMPRESSED, Format.HASH]), st.integers(0, 500))
@settings(max_examples=20)
def test_output_format_independence(fmt, seed):
    p = load("spgemm_gustavson")
    d = p.decl("A")
    q = cinp.Program(tuple(dataclasses.replace(x, formats=(fmt, Format.HASH)) if x is d else x
                           for x in p.decls), p.root)
    assert cinp.validate(q) == []
    inputs, sizes = random_instance(p, 5, 0.4, seed)
    a, ta = run(p, inputs, sizes)
    b, tb = run(q, inputs, sizes)
    assert a["A"].entries() == b["A"].entries()
    assert ta.compute == tb.compute


def test_where_workspace_scoped():
    p = load("spgemm_gustavson_ws")
    inputs, sizes = random_instance(p, 6, 0.5, 2)
    out, _ = run(p, inputs, sizes)
    B, C = inputs["B"].dense(), inputs["C"].dense()
    assert (out["A"].dense() == B @ C).all()
