"""Enumerative scheduling pipeline.

Stages, in order: expression rewrites, where groupings, forall nestings,
minimum-depth filter, workspace naming, protocol enumeration, asymptotic
filter, reformatting, and an optional empirical ranking by task counts.
"""

from __future__ import annotations

import itertools
import math
import os
import time
from dataclasses import dataclass, field, replace

from . import cinp
from .cinp import (
    Access, Assign, AssignOp, Call, Format, Forall, Index, Kind, Literal, Op, Program,
    Protocol, TensorDecl, Where,
)
from .costmodel import annotate, cases, derive_cost, zero_stmt, Loop, Scope
from .frontier import Candidate, Frontier, build_frontier, frontier_stats
from .kernels import KernelSpec
from .queries import EMPTY_CONTEXT, default_context

DEFAULT_MAX = 10_000_000
PLACEHOLDER = "~"


@dataclass
class PipelineOptions:
    taco: bool = False
    max_stage_programs: int = None
    seed: int = 0
    empirical: bool = False
    dims: int = 32
    density: float = 0.01
    trials: int = 1
    context: str = "default"  # or "none"

    def __post_init__(self):
        if self.max_stage_programs is None:
            self.max_stage_programs = int(os.environ.get("SPARSE_ASYMPT_MAX_CANDIDATES", DEFAULT_MAX))
        if self.max_stage_programs <= 0:
            raise ValueError("max_stage_programs must be positive")


@dataclass
class StageTrace:
    stages: list = field(default_factory=list)

    def add(self, name, count, seconds, truncated=False):
        self.stages.append({"stage": name, "count": count, "seconds": round(seconds, 6),
                            "truncated": truncated})

    def count(self, name):
        for s in self.stages:
            if s["stage"] == name:
                return s["count"]
        raise KeyError(name)


def _guard(items, opts: PipelineOptions):
    """Deterministic truncation of an oversized stage."""
    if len(items) > opts.max_stage_programs:
        return items[:opts.max_stage_programs], True
    return items, False


# ---------------------------------------------------------------------------
# expressions


def operands(e, op):
    if isinstance(e, Call) and e.op is op:
        return operands(e.args[0], op) + operands(e.args[1], op)
    return [e]


def right_assoc(op, items):
    out = items[-1]
    for x in reversed(items[:-1]):
        out = Call(op, (x, out))
    return out


def canon_expr(e, key=cinp.print_expr):
    """Flatten associative chains, sort operands by text, re-associate to the right."""
    if not isinstance(e, Call):
        return e
    items = [canon_expr(x, key) for x in operands(e, e.op)]
    items.sort(key=lambda x: (key(x), cinp.print_expr(x)))
    return right_assoc(e.op, items)


def _bracketings(items, op):
    if len(items) == 1:
        yield items[0]
        return
    for k in range(1, len(items)):
        for left in _bracketings(items[:k], op):
            for right in _bracketings(items[k:], op):
                yield Call(op, (left, right))


def ac_forms(e) -> list:
    """Every binary tree over every operand order of each associative chain."""
    if not isinstance(e, Call):
        return [e]
    children = [ac_forms(x) for x in operands(e, e.op)]
    out = {}
    for choice in itertools.product(*children):
        for perm in itertools.permutations(choice):
            for t in _bracketings(list(perm), e.op):
                out.setdefault(cinp.print_expr(t), t)
    return list(out.values())


def expand(e):
    """Distribute products over sums everywhere (one sum of products)."""
    if not isinstance(e, Call):
        return e
    a, b = (expand(x) for x in e.args)
    if e.op is Op.MUL:
        if isinstance(a, Call) and a.op is Op.ADD:
            return expand(Call(Op.ADD, (Call(Op.MUL, (a.args[0], b)), Call(Op.MUL, (a.args[1], b)))))
        if isinstance(b, Call) and b.op is Op.ADD:
            return expand(Call(Op.ADD, (Call(Op.MUL, (a, b.args[0])), Call(Op.MUL, (a, b.args[1])))))
    return Call(e.op, (a, b))


def _ops(e) -> set:
    return {e.op} | set().union(*(_ops(x) for x in e.args)) if isinstance(e, Call) else set()


def enumerate_rewrites(e, opts: PipelineOptions = None) -> list:
    opts = opts or PipelineOptions()
    roots = [e]
    if _ops(e) == {Op.ADD, Op.MUL}:
        roots.append(expand(e))
    out = {}
    for r in roots:
        for t in ac_forms(r):
            out.setdefault(cinp.print_expr(t), t)
    return _guard(list(out.values()), opts)[0]


# ---------------------------------------------------------------------------
# where groupings


def _subterms(e, path=()):
    """``(path, subterm, all-multiplicative ancestors)`` for every non-root call."""
    if not isinstance(e, Call):
        return
    for k, child in enumerate(e.args):
        if isinstance(child, Call):
            yield path + (k,), child
        yield from _subterms(child, path + (k,))


def _ops_on_path(e, path):
    out = []
    for k in path:
        out.append(e.op)
        e = e.args[k]
    return out


def _replace_at(e, path, new):
    if not path:
        return new
    args = list(e.args)
    args[path[0]] = _replace_at(args[path[0]], path[1:], new)
    return Call(e.op, tuple(args))


def _count_access(e) -> int:
    return sum(1 for _ in cinp.expr_accesses(e))


_ws_ids = itertools.count()


def _groupings(lhs, op, rhs) -> list:
    out = [Assign(lhs, op, rhs)]
    for path, sub in _subterms(rhs):
        if _count_access(sub) < 2:
            continue
        mul_path = all(o is Op.MUL for o in _ops_on_path(rhs, path))
        prod_ops = [AssignOp.OVERWRITE] + ([AssignOp.ADD] if op is AssignOp.ADD and mul_path else [])
        w = Access(f"{PLACEHOLDER}{next(_ws_ids)}", ())
        for c in _groupings(lhs, op, _replace_at(rhs, path, w)):
            for pop in prod_ops:
                for p in _groupings(w, pop, sub):
                    out.append(Where(c, p))
    return out


def _rename_stmt(s, ren: dict):
    def acc(a):
        return Access(ren.get(a.tensor, a.tensor), a.indices)

    def ex(e):
        if isinstance(e, Access):
            return acc(e)
        if isinstance(e, Call):
            return Call(e.op, tuple(ex(x) for x in e.args))
        return e

    if isinstance(s, Forall):
        return Forall(s.vars, _rename_stmt(s.body, ren))
    if isinstance(s, Where):
        return Where(_rename_stmt(s.consumer, ren), _rename_stmt(s.producer, ren))
    return Assign(acc(s.lhs), s.op, ex(s.rhs))


def _map_exprs(s, f):
    if isinstance(s, Forall):
        return Forall(s.vars, _map_exprs(s.body, f))
    if isinstance(s, Where):
        return Where(_map_exprs(s.consumer, f), _map_exprs(s.producer, f))
    return Assign(s.lhs, s.op, f(s.rhs))


def _where_order(s) -> list:
    """Workspaces in preorder of the wheres that produce them."""
    if isinstance(s, Forall):
        return _where_order(s.body)
    if isinstance(s, Where):
        return [cinp.result_tensor(s.producer)] + _where_order(s.consumer) + _where_order(s.producer)
    return []


def canon_skeleton(s):
    """Normalize expressions and rename workspaces by position (De Bruijn style)."""
    ws = _where_order(s)
    mask = {w: PLACEHOLDER for w in ws}

    def key(e):
        return cinp.print_expr(_rename_expr(e, mask))

    s = _map_exprs(s, lambda e: canon_expr(e, key))
    s = _rename_stmt(s, {w: f"{PLACEHOLDER}{k}" for k, w in enumerate(ws)})
    return _map_exprs(s, lambda e: canon_expr(e, key))


def _rename_expr(e, ren):
    if isinstance(e, Access):
        return Access(ren.get(e.tensor, e.tensor), e.indices)
    if isinstance(e, Call):
        return Call(e.op, tuple(_rename_expr(x, ren) for x in e.args))
    return e


def enumerate_groupings(spec: KernelSpec, rewrites, opts: PipelineOptions = None) -> list:
    opts = opts or PipelineOptions()
    out = {}
    for e in rewrites:
        for s in _groupings(spec.lhs, spec.op, e):
            c = canon_skeleton(s)
            out.setdefault(cinp.print_stmt(c), c)
    return _guard(list(out.values()), opts)[0]
# ---------------------------------------------------------------------------
# forall nestings


def _uses(s) -> set:
    return {v for a, _ in cinp.stmt_accesses(s) for v in a.vars}


def result_assign(s) -> Assign:
    while not isinstance(s, Assign):
        s = s.body if isinstance(s, Forall) else s.consumer
    return s


def _nest(s, vars_: tuple) -> list:
    """Every placement of ``vars_`` (arriving at ``s``) into blocks.  Blocks
    list their variables in the order given; permutations come later."""
    if isinstance(s, Assign):
        return [Forall(vars_, s) if vars_ else s]
    uc, up = _uses(s.consumer), _uses(s.producer)
    reducing = result_assign(s.producer).op is AssignOp.ADD
    choices = []
    for v in vars_:
        if reducing:
            target = ({"c"} if v in uc else set()) | ({"p"} if v in up else set())
        else:
            target = {"c"} | ({"p"} if v in up else set())
        choices.append([None, frozenset(target)] if target else [None])
    out = []
    for pick in itertools.product(*choices):
        stay = tuple(v for v, t in zip(vars_, pick) if t is None)
        to_c = tuple(v for v, t in zip(vars_, pick) if t and "c" in t)
        to_p = tuple(v for v, t in zip(vars_, pick) if t and "p" in t)
        for c in _nest(s.consumer, to_c):
            for p in _nest(s.producer, to_p):
                node = Where(c, p)
                out.append(Forall(stay, node) if stay else node)
    return out


def nestings_unpermuted(skeleton, indices) -> list:
    return _nest(skeleton, tuple(indices))


def block_permutations(s):
    """Yield ``s`` with every contiguous forall block permuted."""
    if isinstance(s, Assign):
        yield s
    elif isinstance(s, Forall):
        for body in block_permutations(s.body):
            for perm in itertools.permutations(s.vars):
                yield Forall(perm, body)
    else:
        for c in block_permutations(s.consumer):
            for p in block_permutations(s.producer):
                yield Where(c, p)


def permutation_count(s) -> int:
    if isinstance(s, Assign):
        return 1
    if isinstance(s, Forall):
        return math.factorial(len(s.vars)) * permutation_count(s.body)
    return permutation_count(s.consumer) * permutation_count(s.producer)


def enumerate_nestings(skeleton, indices) -> list:
    return [q for s in nestings_unpermuted(skeleton, indices) for q in block_permutations(s)]


def filter_min_depth(cands: list) -> list:
    if not cands:
        return []
    best = min(cinp.depth(c) for c in cands)
    return [c for c in cands if cinp.depth(c) == best]


# ---------------------------------------------------------------------------
# workspace naming


def _quantified(s) -> list:
    """Loop variables under ``s`` in preorder."""
    if isinstance(s, Forall):
        return list(s.vars) + [v for v in _quantified(s.body) if v not in s.vars]
    if isinstance(s, Where):
        c = _quantified(s.consumer)
        return c + [v for v in _quantified(s.producer) if v not in c]
    return []


def name_workspaces(s, spec: KernelSpec, taco: bool = False) -> Program | None:
    """Give placeholders fresh names and their indices: the variables quantified
    inside both sides of their where, in producer order."""
    taken = {d.name for d in spec.decls}
    dims = {}
    for d in spec.decls:
        a = [x for x in [spec.lhs, *cinp.expr_accesses(spec.rhs)] if x.tensor == d.name]
        for acc in a:
            dims.update(zip(acc.vars, d.dims))
    names = (n for n in itertools.chain(["w"], (f"w{k}" for k in itertools.count(1))) if n not in taken)
    decls = list(spec.decls)

    def walk(node):
        if isinstance(node, Forall):
            return Forall(node.vars, walk(node.body))
        if isinstance(node, Assign):
            return node
        ph = cinp.result_tensor(node.producer)
        qc = set(_quantified(node.consumer))
        idx = tuple(v for v in _quantified(node.producer) if v in qc)
        if taco and len(idx) >= 2:
            raise _Drop
        name = next(names)
        decls.append(TensorDecl(name, tuple(dims[v] for v in idx), (Format.UNCOMPRESSED,) * len(idx),
                                kind=Kind.WORKSPACE))
        sub = {ph: (name, idx)}
        return Where(walk(_index(node.consumer, sub)), walk(_index(node.producer, sub)))

    try:
        root = walk(s)
    except _Drop:
        return None
    p = Program(tuple(decls), root)
    if any(d.code == "binding" for d in cinp.validate(p)):
        return None
    return p


class _Drop(Exception):
    pass


def _index(s, sub):
    def acc(a):
        if a.tensor in sub:
            name, idx = sub[a.tensor]
            return Access(name, tuple(Index(v) for v in idx))
        return a

    def ex(e):
        if isinstance(e, Access):
            return acc(e)
        if isinstance(e, Call):
            return Call(e.op, tuple(ex(x) for x in e.args))
        return e

    if isinstance(s, Forall):
        return Forall(s.vars, _index(s.body, sub))
    if isinstance(s, Where):
        return Where(_index(s.consumer, sub), _index(s.producer, sub))
    return Assign(acc(s.lhs), s.op, ex(s.rhs))


# ---------------------------------------------------------------------------
# protocols


def _sites(s, loops=(), scope=()):
    """Yield ``(assign, enclosing loops, loops since the lhs tensor's where)``."""
    if isinstance(s, Forall):
        yield from _sites(s.body, loops + s.vars, scope + s.vars)
    elif isinstance(s, Where):
        yield from _sites(s.consumer, loops, scope)
        yield from _sites(s.producer, loops, ())
    else:
        yield s, loops, scope


def write_protocols(access: Access, decl: TensorDecl | None, scope: tuple) -> tuple:
    """Append on every level whose prefix is written in lexicographic order,
    insert below.  With no ``decl`` storage is assumed concordant."""
    if decl is None:
        levels = sorted(access.vars, key=lambda v: scope.index(v) if v in scope else len(scope))
    else:
        levels = [access.vars[m] for m in decl.mode_order]
    per_level = []
    ok = True
    for lv in range(len(levels)):
        ok = ok and tuple(scope[:lv + 1]) == tuple(levels[:lv + 1])
        per_level.append(Protocol.APPEND if ok else Protocol.INSERT)
    return tuple(per_level[levels.index(v)] for v in access.vars)


def _read_options(a: Access, loops: tuple, decl: TensorDecl, taco: bool) -> list:
    r = len(a.vars)
    if r == 0:
        return [()]
    if decl.kind is Kind.INPUT and not decl.is_sparse:
        return [(Protocol.LOCATE,) * r]
    if not taco:
        return list(itertools.product((Protocol.STEP, Protocol.LOCATE), repeat=r))
    first = min(range(r), key=lambda m: loops.index(a.vars[m]))
    loc = tuple(Protocol.LOCATE if m == first else Protocol.STEP for m in range(r))
    return [(Protocol.STEP,) * r, loc]


def _set_stmt_protocols(s, choose):
    """Rebuild ``s`` with ``choose(kind, key, access)`` giving each access's protocols."""
    counter = itertools.count()

    def ex(e):
        if isinstance(e, Access):
            return e.with_protocols(choose(next(counter), e))
        if isinstance(e, Call):
            return Call(e.op, tuple(ex(x) for x in e.args))
        return e

    def walk(node, loops, scope):
        if isinstance(node, Forall):
            return Forall(node.vars, walk(node.body, loops + node.vars, scope + node.vars))
        if isinstance(node, Where):
            return Where(walk(node.consumer, loops, scope), walk(node.producer, loops, ()))
        lhs = node.lhs.with_protocols(write_protocols(node.lhs, None, scope))
        return Assign(lhs, node.op, ex(node.rhs))

    return walk(s, (), ())


def enumerate_protocols(p: Program, taco: bool = False) -> list:
    reads = []
    for a, loops, _ in _sites(p.root):
        for r in cinp.expr_accesses(a.rhs):
            reads.append(_read_options(r, loops, p.decl(r.tensor), taco))
    out = []
    for combo in itertools.product(*reads):
        q = Program(p.decls, _set_stmt_protocols(p.root, lambda k, e: combo[k]))
        if lossless(q):
            out.append(q)
    return out


def protocol_count(p: Program, taco: bool = False) -> int:
    n = 1
    for a, loops, _ in _sites(p.root):
        for r in cinp.expr_accesses(a.rhs):
            n *= len(_read_options(r, loops, p.decl(r.tensor), taco))
    return n


def lossless(p: Program) -> bool:
    """True when no loop skips work: with all its steppers zero, every loop
    body must annihilate (otherwise coiterating the steppers would drop terms)."""
    def ok(node):
        if isinstance(node, Loop):
            steps, alts = cases(node.var, node.body)
            if steps and zero_stmt(node.body, frozenset(a.key for a in steps)) is not None:
                return False
            return all(ok(b) for _, b in alts)
        if isinstance(node, Scope):
            return ok(node.consumer) and ok(node.producer)
        return True

    root = zero_stmt(annotate(p))
    return root is None or ok(root)


# ---------------------------------------------------------------------------
# asymptotic filter


def context_for(p: Program, opts: PipelineOptions):
    return default_context(p) if opts.context == "default" else EMPTY_CONTEXT


def filter_asymptotic(cands: list, opts: PipelineOptions = None) -> Frontier:
    """Frontier of the protocolized candidates (storage assumed concordant)."""
    opts = opts or PipelineOptions()
    if not cands:
        return Frontier()
    ctx = context_for(cands[0], opts)
    t0 = time.perf_counter()
    universe = [Candidate(p, derive_cost(p).total, {"id": k}) for k, p in enumerate(cands)]
    f = build_frontier(universe, ctx)
    f.seconds = time.perf_counter() - t0
    return f


# ---------------------------------------------------------------------------
# reformatting


def _natural(fmt: Format) -> Protocol:
    return Protocol.LOCATE if fmt is Format.UNCOMPRESSED else Protocol.STEP


def _fresh(taken: set, base: str) -> str:
    name = base + "'"
    while name in taken:
        name += "'"
    taken.add(name)
    return name


def _fresh_workspace(taken: set) -> str:
    name = next(n for n in itertools.chain(["w"], (f"w{k}" for k in itertools.count(1))) if n not in taken)
    taken.add(name)
    return name


def _loop_pos(loops, v):
    return loops.index(v) if v in loops else len(loops)


def _rebuild(s, f_assign):
    if isinstance(s, Forall):
        return Forall(s.vars, _rebuild(s.body, f_assign))
    if isinstance(s, Where):
        return Where(_rebuild(s.consumer, f_assign), _rebuild(s.producer, f_assign))
    return f_assign(s)


def _map_reads(e, f):
    if isinstance(e, Access):
        return f(e)
    if isinstance(e, Call):
        return Call(e.op, tuple(_map_reads(x, f) for x in e.args))
    return e


def _reads_with_loops(root):
    for a, loops, _ in _sites(root):
        for r in cinp.expr_accesses(a.rhs):
            yield r, loops


def insert_reformatting(p: Program, taco: bool = False) -> Program | None:
    """Make every access concordant and supported by its level formats.

    Internal workspaces get a level order matching their reads and minimal
    formats; discordant or unsupported inputs are copied by a pre-pass; an
    output that cannot take its writes is produced through a workspace,
    only for its bottom levels when the top levels are already in order.
    """
    allowed = (Format.UNCOMPRESSED, Format.COMPRESSED) if taco else tuple(Format)
    decls = {d.name: d for d in p.decls}
    order = [d.name for d in p.decls]
    taken = set(decls)
    root = p.root
    internal = []

    # internal workspaces: storage follows the consumer's read order
    for d in [d for d in p.decls if d.kind is Kind.WORKSPACE]:
        internal.append(d.name)
        if d.rank == 0:
            continue
        levels = {tuple(sorted(range(d.rank), key=lambda m: _loop_pos(loops, r.vars[m])))
                  for r, loops in _reads_with_loops(root) if r.tensor == d.name}
        if len(levels) > 1:
            return None
        mode_order = levels.pop() if levels else tuple(range(d.rank))
        decls[d.name] = replace(d, mode_order=mode_order)

    # the output
    out = next(d for d in p.decls if d.kind is Kind.OUTPUT)
    ok = True
    for a, loops, scope in _sites(root):
        if a.lhs.tensor == out.name:
            wp = write_protocols(a.lhs, out, scope)
            ok = ok and all(cinp.supports(out.format_of_mode(m), wp[m]) for m in range(out.rank))
    if not ok:
        res = _reformat_output(root, out, decls, order, taken, taco)
        if res is None:
            return None
        root, wname = res
        if wname is not None:
            internal.append(wname)

    # rewrite every write with protocols for the real storage order
    def fix_writes(node, scope=()):
        if isinstance(node, Forall):
            return Forall(node.vars, fix_writes(node.body, scope + node.vars))
        if isinstance(node, Where):
            return Where(fix_writes(node.consumer, scope), fix_writes(node.producer, ()))
        d = decls[node.lhs.tensor]
        return Assign(node.lhs.with_protocols(write_protocols(node.lhs, d, scope)), node.op, node.rhs)

    root = fix_writes(root)

    # workspace formats from the protocols they must support
    for name in [n for n in order if decls[n].kind is Kind.WORKSPACE]:
        d = decls[name]
        if d.rank == 0:
            continue
        fmts = _workspace_formats(root, d, tuple(Format) if name not in internal else allowed)
        if fmts is None and taco and name in internal:
            # a dense workspace filled by insert is read back by locate
            root = _locate_reads(root, name)
            fmts = _workspace_formats(root, d, allowed)
        if fmts is None:
            return None
        decls[name] = replace(d, formats=fmts)

    # inputs: copy discordant or unsupported ones in a pre-pass
    copies = {}
    for r, loops in list(_reads_with_loops(root)):
        d = decls[r.tensor]
        if d.kind is not Kind.INPUT:
            continue
        want = tuple(sorted(range(d.rank), key=lambda m: _loop_pos(loops, r.vars[m])))
        fine = want == d.mode_order and all(cinp.supports(d.format_of_mode(m), r.protocols[m])
                                            for m in range(d.rank))
        if not fine:
            copies.setdefault((r.tensor, want), []).append(r)
    rename = {}
    prepasses = []
    for (tensor, want), accs in sorted(copies.items()):
        src = decls[tensor]
        name = _fresh(taken, tensor)
        fmts = []
        for m in want:
            fmt = cinp.minimal_format({a.protocols[m] for a in accs}, Protocol.APPEND)
            if fmt is None:
                return None
            fmts.append(fmt)
        new = TensorDecl(name, src.dims, tuple(fmts), want, Kind.WORKSPACE)
        decls[name] = new
        order.append(name)
        for a in accs:
            rename[(id(a))] = name
        vars_ = accs[0].vars
        loop_vars = tuple(vars_[m] for m in want)
        lhs = Access(name, tuple(Index(v, Protocol.APPEND) for v in vars_))
        rhs = Access(tensor, tuple(Index(v, _natural(src.format_of_mode(m))) for m, v in enumerate(vars_)))
        prepasses.append(Forall(loop_vars, Assign(lhs, AssignOp.OVERWRITE, rhs)))

    if rename:
        def swap(a):
            return Access(rename[id(a)], a.indices) if id(a) in rename else a
        root = _rebuild(root, lambda s: Assign(s.lhs, s.op, _map_reads(s.rhs, swap)))
        for pre in prepasses:
            root = Where(root, pre)

    if taco:
        ws = [decls[n] for n in internal]
        if len(ws) > 1 or any(d.rank > 1 or Format.HASH in d.formats for d in ws):
            return None
    q = Program(tuple(decls[n] for n in order), root)
    if cinp.validate(q):
        return None
    return q


def _replace_lhs(s, tensor, new_access):
    def f(a):
        if a.lhs.tensor == tensor:
            return Assign(new_access(a.lhs), a.op, a.rhs)
        return a
    return _rebuild(s, f)


def _reformat_output(root, out: TensorDecl, decls, order, taken, taco):
    """Route writes to ``out`` through a workspace; returns the new root and the
    workspace name when it is internal (prefix form), else ``None``."""
    levels_of = lambda a: [a.vars[m] for m in out.mode_order]
    writes = [a.lhs for a, _, _ in _sites(root) if a.lhs.tensor == out.name]
    lv = levels_of(writes[0])
    if any(levels_of(w) != lv for w in writes):
        return None
    top = root.vars if isinstance(root, Forall) else ()
    p = 0
    while p < len(lv) and p < len(top) and lv[p] == top[p]:
        p += 1
    dims = dict(zip(writes[0].vars, out.dims))
    prefix = p >= 1 and (not taco or out.rank - p == 1)
    if prefix:
        bottom = tuple(lv[p:])
        name = _fresh_workspace(taken)
        decls[name] = TensorDecl(name, tuple(dims[v] for v in bottom), (Format.UNCOMPRESSED,) * len(bottom),
                                 kind=Kind.WORKSPACE)
        order.append(name)
        body = _replace_lhs(root.body, out.name, lambda a: Access(name, tuple(Index(v) for v in bottom)))
        rest = top[p:]
        if rest:
            body = Forall(rest, body)
        cons = Forall(bottom, Assign(Access(out.name, tuple(Index(v) for v in writes[0].vars)),
                                     AssignOp.OVERWRITE,
                                     Access(name, tuple(Index(v, Protocol.STEP) for v in bottom))))
        new = Forall(top[:p], Where(cons, body))
        return new, name
    name = _fresh_workspace(taken)
    decls[name] = TensorDecl(name, out.dims, (Format.UNCOMPRESSED,) * out.rank, out.mode_order,
                             kind=Kind.WORKSPACE)
    order.append(name)
    vars_ = writes[0].vars
    body = _replace_lhs(root, out.name, lambda a: Access(name, a.indices))
    cons = Forall(tuple(lv), Assign(Access(out.name, tuple(Index(v) for v in vars_)), AssignOp.OVERWRITE,
                                    Access(name, tuple(Index(v, Protocol.STEP) for v in vars_))))
    return Where(cons, body), None


def _workspace_formats(root, d: TensorDecl, allowed) -> tuple | None:
    fmts = []
    for m in d.mode_order:
        reads = {r.protocols[m] for r, _ in _reads_with_loops(root) if r.tensor == d.name}
        writes = {a.lhs.protocols[m] for a, _, _ in _sites(root) if a.lhs.tensor == d.name}
        write = Protocol.INSERT if Protocol.INSERT in writes else Protocol.APPEND
        fmt = cinp.minimal_format(reads, write, allowed)
        if fmt is None:
            return None
        fmts.append(fmt)
    return tuple(fmts)


def _locate_reads(root, name):
    def swap(a):
        if a.tensor != name:
            return a
        return a.with_protocols(tuple(Protocol.LOCATE for _ in a.indices))
    return _rebuild(root, lambda s: Assign(s.lhs, s.op, _map_reads(s.rhs, swap)))


# ---------------------------------------------------------------------------
# empirical ranking


def empirical_rank(cands: list, opts: PipelineOptions = None) -> list:
    from .interp import random_instance, run
    opts = opts or PipelineOptions()
    scored = []
    for c in cands:
        prog = c.program if isinstance(c, Candidate) else c
        total = 0
        for t in range(opts.trials):
            inputs, sizes = random_instance(prog, opts.dims, opts.density, opts.seed + t)
            _, trace = run(prog, inputs, sizes)
            total += trace.total
        scored.append((total, str(prog), c))
    scored.sort(key=lambda x: (x[0], x[1]))
    return [(c, total) for total, _, c in scored]


# ---------------------------------------------------------------------------
# driver


@dataclass
class ScheduleResult:
    spec: KernelSpec
    trace: StageTrace
    frontier: Frontier
    final: list
    ranked: list = None
    report: object = None

    def to_json(self) -> dict:
        out = {
            "kernel": self.spec.name,
            "stages": self.trace.stages,
            "frontier": [{"program": str(c.program), "cost": str(c.cost)} for c in self.frontier.members],
            "final": [str(p) for p in self.final],
            "report": self.report.to_json() if self.report else None,
        }
        if self.ranked is not None:
            out["ranking"] = [{"program": str(p), "tasks": n} for p, n in self.ranked]
        return out


def min_depth_universe(spec: KernelSpec, opts: PipelineOptions, trace: StageTrace = None):
    """Stages up to protocol enumeration; returns the protocolized candidates."""
    trace = trace if trace is not None else StageTrace()

    def stage(name, fn):
        t0 = time.perf_counter()
        items = fn()
        items, cut = _guard(items, opts)
        trace.add(name, len(items), time.perf_counter() - t0, cut)
        return items

    rewrites = stage("rewrites", lambda: enumerate_rewrites(spec.rhs, opts))
    groups = stage("groupings", lambda: enumerate_groupings(spec, rewrites, opts))
    skel = [n for g in groups for n in nestings_unpermuted(g, spec.indices)]
    trace.add("nestings", sum(permutation_count(s) for s in skel), 0.0)
    best = min(cinp.depth(s) for s in skel)
    t0 = time.perf_counter()
    shallow = [s for s in skel if cinp.depth(s) == best]
    nested = [q for s in shallow for q in block_permutations(s)]
    nested, cut = _guard(nested, opts)
    trace.add("min_depth", len(nested), time.perf_counter() - t0, cut)
    named = stage("naming", lambda: [p for p in (name_workspaces(s, spec, opts.taco) for s in nested) if p])
    return stage("protocols", lambda: [q for p in named for q in enumerate_protocols(p, opts.taco)])


def schedule(spec: KernelSpec, opts: PipelineOptions = None) -> ScheduleResult:
    opts = opts or PipelineOptions()
    trace = StageTrace()
    protocolized = min_depth_universe(spec, opts, trace)
    f = filter_asymptotic(protocolized, opts)
    trace.add("asymptotic", len(f.members), f.seconds)
    t0 = time.perf_counter()
    final = [q for q in (insert_reformatting(c.program, opts.taco) for c in f.members) if q is not None]
    trace.add("reformat", len(final), time.perf_counter() - t0)
    res = ScheduleResult(spec, trace, f, final)
    res.report = frontier_stats(f, len(protocolized))
    if opts.empirical and final:
        t0 = time.perf_counter()
        res.ranked = empirical_rank(final, opts)
        trace.add("empirical", len(res.ranked), time.perf_counter() - t0)
    return res


def count_min_depth(spec: KernelSpec, taco: bool = False) -> int:
    """Number of min-depth protocolized schedules, counted without building
    the loop permutations or protocol combinations."""
    opts = PipelineOptions(taco=taco)
    groups = enumerate_groupings(spec, enumerate_rewrites(spec.rhs, opts), opts)
    skel = [n for g in groups for n in nestings_unpermuted(g, spec.indices)]
    best = min(cinp.depth(s) for s in skel)
    total = 0
    for s in skel:
        if cinp.depth(s) != best:
            continue
        for q in block_permutations(s) if taco else [s]:
            p = name_workspaces(q, spec, taco)
            if p is None:
                continue
            mult = 1 if taco else permutation_count(s)
            total += mult * protocol_count(p, taco)
    return total
