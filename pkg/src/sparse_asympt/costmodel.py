"""Symbolic cost of a CIN-P program by abstract interpretation.

The walk carries a *guard* (which iterations are live) and a *state* per
tensor (where it may be nonzero).  Each forall emits one iteration set per
stepper, then recurses once per zero/nonzero case of its steppers; each
assignment emits ``{[bound] | guard}``.

The loop nest is first split into single-variable loops with stable site ids
(``L<n>:<var>`` and ``S<n>:<tensor>``); the interpreter uses the same ids and
the same zero-annihilation rules so traces can be compared set for set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Union

from . import cinp
from .cinp import Access, AssignOp, Call, CinpError, Literal, Op, Program, Protocol
from .queries import (
    FALSE, TRUE, Atom, PatternExpr, TaskSet, Var, conj, disj, exists, free_vars,
    normalize, simplify, substitute, taskset_pattern, union,
)

ZERO = Literal(0)


# ---------------------------------------------------------------------------
# annotated IR


@dataclass(frozen=True)
class Loop:
    site: str
    var: str
    body: "Node"


@dataclass(frozen=True)
class Scope:
    consumer: "Node"
    producer: "Node"
    workspace: str


@dataclass(frozen=True)
class Update:
    site: str
    lhs: Access
    op: AssignOp
    rhs: cinp.Expr


Node = Union[Loop, Scope, Update]


def annotate(p: Program) -> Node:
    """Split foralls into single-variable loops and number every site in preorder."""
    counter = itertools.count()

    def walk(s):
        if isinstance(s, cinp.Forall):
            sites = [f"L{next(counter)}:{v}" for v in s.vars]
            node = walk(s.body)
            for site, v in reversed(list(zip(sites, s.vars))):
                node = Loop(site, v, node)
            return node
        if isinstance(s, cinp.Where):
            cons = walk(s.consumer)
            prod = walk(s.producer)
            return Scope(cons, prod, cinp.result_tensor(s.producer))
        return Update(f"S{next(counter)}:{s.lhs.tensor}", s.lhs, s.op, s.rhs)

    return walk(p.root)


def access_label(a: Access) -> str:
    return f"{a.tensor}[{', '.join(a.vars)}]"


def is_zero(e) -> bool:
    return isinstance(e, Literal) and e.value == 0


def zero_expr(e, zeros: frozenset):
    """Substitute 0 for reads whose ``key`` is in ``zeros`` and annihilate."""
    if isinstance(e, Access):
        return ZERO if e.key in zeros else e
    if isinstance(e, Literal):
        return e
    a, b = (zero_expr(x, zeros) for x in e.args)
    if e.op is Op.MUL:
        if is_zero(a) or is_zero(b):
            return ZERO
    else:
        if is_zero(a):
            return b
        if is_zero(b):
            return a
    if a is e.args[0] and b is e.args[1]:
        return e
    return Call(e.op, (a, b))


def zero_stmt(s: Node, zeros: frozenset = frozenset(), dead: frozenset = frozenset()) -> Node | None:
    """Simplify ``s`` with the reads in ``zeros`` (by access key) and whole
    tensors in ``dead`` replaced by zero.  Returns ``None`` for a no-op.

    An assignment whose right side collapses to 0 is dropped; a where whose
    producer vanishes leaves its workspace zero in the consumer; a where whose
    consumer vanishes is dropped with its producer.
    """
    if isinstance(s, Loop):
        body = zero_stmt(s.body, zeros, dead)
        if body is None:
            return None
        return s if body is s.body else Loop(s.site, s.var, body)
    if isinstance(s, Scope):
        prod = zero_stmt(s.producer, zeros, dead)
        if prod is None:
            dead = dead | {s.workspace}
        cons = zero_stmt(s.consumer, zeros, dead)
        if cons is None:
            return None
        if prod is None:
            return cons
        if prod is s.producer and cons is s.consumer:
            return s
        return Scope(cons, prod, s.workspace)
    rhs = s.rhs
    if dead:
        rhs = _kill(rhs, dead)
    rhs = zero_expr(rhs, zeros)
    if is_zero(rhs):
        return None
    return s if rhs is s.rhs else Update(s.site, s.lhs, s.op, rhs)


def _kill(e, dead):
    if isinstance(e, Access):
        return ZERO if e.tensor in dead else e
    if isinstance(e, Call):
        return Call(e.op, tuple(_kill(x, dead) for x in e.args))
    return e


def node_reads(s: Node):
    if isinstance(s, Loop):
        yield from node_reads(s.body)
    elif isinstance(s, Scope):
        yield from node_reads(s.consumer)
        yield from node_reads(s.producer)
    else:
        yield from cinp.expr_accesses(s.rhs)


def steppers(var: str, body: Node) -> list[Access]:
    """Distinct reads of ``body`` that step over ``var``, in first-occurrence order."""
    seen = {}
    for a in node_reads(body):
        for ix in a.indices:
            if ix.var == var and ix.protocol is Protocol.STEP and a.key not in seen:
                seen[a.key] = a
    return list(seen.values())


def cases(var: str, body: Node):
    """``(stepper list, [(nonzero steppers, simplified body)])`` for a loop.

    The all-zero case is never executed and is omitted; cases whose body
    annihilates entirely are omitted too.
    """
    steps = steppers(var, body)
    out = []
    n = len(steps)
    for mask in range(1, 1 << n) if n else [0]:
        live = [a for k, a in enumerate(steps) if mask >> k & 1]
        zeros = frozenset(a.key for k, a in enumerate(steps) if not mask >> k & 1)
        b = zero_stmt(body, zeros)
        if b is not None:
            out.append((live, b))
    return steps, out


# ---------------------------------------------------------------------------
# cost derivation


@dataclass
class DerivedCost:
    coiteration: dict = field(default_factory=dict)  # (site, label) -> TaskSet
    compute: dict = field(default_factory=dict)      # site -> TaskSet
    total: TaskSet = None

    def sites(self):
        return list(self.coiteration.items()) + list(self.compute.items())


def mode_vars(decl) -> tuple[Var, ...]:
    return tuple(Var(f"{decl.name}#{m}", d) for m, d in enumerate(decl.dims))


def rename_guard(guard: PatternExpr, access: Access, decl, dims: dict, keep=frozenset()) -> PatternExpr:
    """Re-express ``guard`` over the mode variables of ``access``'s tensor;
    everything except the access indices and ``keep`` is quantified away."""
    targets = mode_vars(decl)
    acc_vars = [Var(v, dims[v]) for v in access.vars]
    hidden = [v for v in sorted(free_vars(guard)) if v not in acc_vars and v.name not in keep]
    body = exists(hidden, guard)
    return substitute(body, dict(zip(acc_vars, targets)))


def _compact(e: PatternExpr, head) -> PatternExpr:
    if e in (TRUE, FALSE):
        return e
    head = tuple(head) + tuple(sorted(free_vars(e) - set(head)))
    return taskset_pattern(simplify(normalize(head, e), strict=True))


class _Deriver:
    def __init__(self, p: Program, check_protocols: bool = True):
        self.p = p
        self.dims = p.index_dims()
        self.check = check_protocols
        self.state: dict[str, PatternExpr] = {}
        self.scope: dict[str, frozenset] = {}
        self.coiter: dict = {}
        self.compute: dict = {}
        for d in p.decls:
            if d.kind is cinp.Kind.INPUT:
                self.state[d.name] = Atom(d.name, mode_vars(d))
            else:
                self.state[d.name] = FALSE

    def var(self, name):
        return Var(name, self.dims[name])

    def read_state(self, a: Access) -> PatternExpr:
        d = self.p.decl(a.tensor)
        return substitute(self.state[a.tensor], dict(zip(mode_vars(d), map(self.var, a.vars))))

    def emit(self, table, key, head, guard):
        t = normalize(head, guard)
        table[key] = table[key] | t if key in table else t

    def run(self, node: Node, bound: tuple, guard: PatternExpr):
        if isinstance(node, Loop):
            bound2 = bound + (self.var(node.var),)
            steps, alts = cases(node.var, node.body)
            if not steps:
                self.emit(self.coiter, (node.site, "*"), bound2, guard)
                self.run(node.body, bound2, guard)
                return
            nz = {}
            for a in steps:
                hidden = [self.var(v) for v in a.vars if self.var(v) not in bound2]
                nz[a.key] = exists(hidden, self.read_state(a))
                self.emit(self.coiter, (node.site, access_label(a)), bound2, conj(guard, nz[a.key]))
            for live, body in alts:
                present = {a.key for a in node_reads(body)}
                g = conj(guard, *(nz[a.key] for a in live if a.key in present))
                g = _compact(g, bound2)
                if g != FALSE:
                    self.run(body, bound2, g)
        elif isinstance(node, Scope):
            self.state[node.workspace] = FALSE
            self.scope[node.workspace] = frozenset(v.name for v in bound)
            self.run(node.producer, bound, guard)
            self.run(node.consumer, bound, guard)
        else:
            if self.check:
                for a in [node.lhs, *cinp.expr_accesses(node.rhs)]:
                    if Protocol.UNSPECIFIED in a.protocols:
                        raise CinpError(f"unspecified protocol in {access_label(a)}")
            self.emit(self.compute, node.site, bound, guard)
            d = self.p.decl(node.lhs.tensor)
            keep = self.scope.get(node.lhs.tensor, frozenset())
            new = disj(self.state[node.lhs.tensor], rename_guard(guard, node.lhs, d, self.dims, keep))
            self.state[node.lhs.tensor] = _compact(new, mode_vars(d))


def derive_cost(p: Program, check_protocols: bool = True) -> DerivedCost:
    """Coiteration and compute task sets per site, plus their union."""
    for var in _unbound(p):
        raise CinpError(f"unbound index variable {var}")
    d = _Deriver(p, check_protocols)
    root = zero_stmt(annotate(p))
    if root is not None:
        d.run(root, (), TRUE)
    out = DerivedCost(
        {k: simplify(v, strict=True) for k, v in d.coiter.items()},
        {k: simplify(v, strict=True) for k, v in d.compute.items()},
    )
    out.total = simplify(union(*out.coiteration.values(), *out.compute.values()))
    return out


def _unbound(p: Program):
    out = []
    for a, loops in cinp.assignments(p.root):
        for acc in [a.lhs, *cinp.expr_accesses(a.rhs)]:
            out += [v for v in acc.vars if v not in loops and v not in out]
    return out
