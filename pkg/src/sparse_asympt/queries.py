"""Task sets as unions of conjunctive queries.

A task set ``{[i:I, j:J] | exists k . B(i,k) & C(k,j)}`` lists the index
tuples at which work happens.  Each task also stands for every sub-tuple and
permutation of itself (lazy head semantics), so containment is decided by a
homomorphism that only has to *cover* the contained query's head.
"""

from __future__ import annotations

import enum
import itertools
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Union

import numpy as np

from .hom import find_hom


@dataclass(frozen=True, order=True)
class Var:
    name: str
    dim: str

    def __str__(self):
        return self.name


@dataclass(frozen=True, order=True)
class Clause:
    pred: str
    args: tuple[Var, ...]

    def __str__(self):
        return f"{self.pred}({','.join(v.name for v in self.args)})"


# ---------------------------------------------------------------------------
# Boolean pattern expressions (no negation)


@dataclass(frozen=True)
class Const:
    value: bool


TRUE = Const(True)
FALSE = Const(False)


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple[Var, ...]


@dataclass(frozen=True)
class And:
    parts: tuple


@dataclass(frozen=True)
class Or:
    parts: tuple


@dataclass(frozen=True)
class Exists:
    vars: tuple[Var, ...]
    body: "PatternExpr"


PatternExpr = Union[Const, Atom, And, Or, Exists]


def conj(*parts) -> PatternExpr:
    flat = []
    for p in parts:
        if p == FALSE:
            return FALSE
        if p == TRUE:
            continue
        flat.extend(p.parts if isinstance(p, And) else (p,))
    if not flat:
        return TRUE
    return flat[0] if len(flat) == 1 else And(tuple(flat))


def disj(*parts) -> PatternExpr:
    flat = []
    for p in parts:
        if p == TRUE:
            return TRUE
        if p == FALSE:
            continue
        flat.extend(p.parts if isinstance(p, Or) else (p,))
    if not flat:
        return FALSE
    return flat[0] if len(flat) == 1 else Or(tuple(flat))


def exists(vars_: Iterable[Var], body: PatternExpr) -> PatternExpr:
    vs = tuple(v for v in dict.fromkeys(vars_) if v in free_vars(body))
    if not vs or isinstance(body, Const):
        return body
    return Exists(vs, body)


def free_vars(e: PatternExpr) -> frozenset:
    if isinstance(e, Atom):
        return frozenset(e.args)
    if isinstance(e, (And, Or)):
        return frozenset().union(*(free_vars(p) for p in e.parts))
    if isinstance(e, Exists):
        return free_vars(e.body) - set(e.vars)
    return frozenset()


def substitute(e: PatternExpr, mapping: dict) -> PatternExpr:
    """Rename free variables; bound variables are renamed fresh to avoid capture."""
    if isinstance(e, Atom):
        return Atom(e.pred, tuple(mapping.get(v, v) for v in e.args))
    if isinstance(e, And):
        return conj(*(substitute(p, mapping) for p in e.parts))
    if isinstance(e, Or):
        return disj(*(substitute(p, mapping) for p in e.parts))
    if isinstance(e, Exists):
        inner = dict(mapping)
        fresh = tuple(fresh_var(v.dim) for v in e.vars)
        inner.update(zip(e.vars, fresh))
        return Exists(fresh, substitute(e.body, inner))
    return e


def evaluate(e: PatternExpr, env: dict, patterns: dict, dim_sizes: dict) -> bool:
    """Direct Boolean evaluation of ``e`` (independent of normalization)."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Atom):
        return tuple(env[v] for v in e.args) in patterns.get(e.pred, ())
    if isinstance(e, And):
        return all(evaluate(p, env, patterns, dim_sizes) for p in e.parts)
    if isinstance(e, Or):
        return any(evaluate(p, env, patterns, dim_sizes) for p in e.parts)
    ranges = [range(dim_sizes[v.dim]) for v in e.vars]
    for vals in itertools.product(*ranges):
        if evaluate(e.body, {**env, **dict(zip(e.vars, vals))}, patterns, dim_sizes):
            return True
    return False


_fresh_counter = itertools.count()


def fresh_var(dim: str) -> Var:
    return Var(f"{dim.lower()}~{next(_fresh_counter)}", dim)


# ---------------------------------------------------------------------------
# conjunctive queries


@dataclass(frozen=True)
class CQ:
    head: tuple[Var, ...]
    clauses: tuple[Clause, ...]

    @property
    def quantified(self) -> tuple[Var, ...]:
        heads = set(self.head)
        out = []
        for c in self.clauses:
            for v in c.args:
                if v not in heads and v not in out:
                    out.append(v)
        return tuple(out)

    def __str__(self):
        head = ", ".join(f"{v.name}:{v.dim}" for v in self.head)
        q = self.quantified
        body = " & ".join(map(str, self.clauses)) if self.clauses else "true"
        if q:
            body = f"exists {', '.join(v.name for v in q)} . {body}"
        return f"{{[{head}] | {body}}}"


def make_cq(head: Iterable[Var], clauses: Iterable[Clause]) -> CQ:
    """Build a CQ in canonical form: deduplicated, quantified variables renamed
    in first-use order, clauses sorted."""
    head = tuple(head)
    if len(set(head)) != len(head):
        raise ValueError("head variables must be distinct")
    clauses = set(clauses)
    head_pos = {v: i for i, v in enumerate(head)}
    order: dict[Var, int] = {}

    def key(c):
        return (c.pred, tuple(
            (0, head_pos[v]) if v in head_pos else (1, order[v]) if v in order else (2, v.dim, v.name)
            for v in c.args))

    for _ in range(3):
        new: dict[Var, int] = {}
        for c in sorted(clauses, key=key):
            for v in c.args:
                if v not in head_pos and v not in new:
                    new[v] = len(new)
        if new == order:
            break
        order = new
    taken = {v.name for v in head}
    per_dim: Counter = Counter()
    rename = {}
    for v in sorted(order, key=order.get):
        while True:
            per_dim[v.dim] += 1
            name = f"{v.dim.lower()}{per_dim[v.dim]}"
            if name not in taken:
                break
        taken.add(name)
        rename[v] = Var(name, v.dim)
    out = {Clause(c.pred, tuple(rename.get(v, v) for v in c.args)) for c in clauses}
    return CQ(head, tuple(sorted(out, key=lambda c: (c.pred, tuple(v.name for v in c.args)))))


@dataclass(frozen=True)
class TaskSet:
    disjuncts: tuple[CQ, ...] = ()

    def __str__(self):
        return " + ".join(map(str, self.disjuncts)) if self.disjuncts else "{}"

    def __or__(self, other: "TaskSet") -> "TaskSet":
        return union(self, other)

    def __bool__(self):
        return bool(self.disjuncts)

    def __len__(self):
        return len(self.disjuncts)

    def to_json(self) -> dict:
        return {"union": [{
            "head": [[v.name, v.dim] for v in cq.head],
            "exists": [[v.name, v.dim] for v in cq.quantified],
            "clauses": [[c.pred, *(v.name for v in c.args)] for c in cq.clauses],
        } for cq in self.disjuncts]}

    @classmethod
    def from_json(cls, data: dict) -> "TaskSet":
        out = []
        for d in data["union"]:
            vs = {n: Var(n, dim) for n, dim in d["head"] + d.get("exists", [])}
            out.append(make_cq([vs[n] for n, _ in d["head"]],
                               [Clause(c[0], tuple(vs[n] for n in c[1:])) for c in d["clauses"]]))
        return taskset(out)


EMPTY = TaskSet(())


def taskset(cqs: Iterable[CQ]) -> TaskSet:
    return TaskSet(tuple(sorted(set(cqs), key=str)))


def union(*sets: TaskSet) -> TaskSet:
    return taskset(cq for s in sets for cq in s.disjuncts)


# ---------------------------------------------------------------------------
# normalization


def _dnf(e: PatternExpr) -> list[frozenset]:
    if isinstance(e, Const):
        return [frozenset()] if e.value else []
    if isinstance(e, Atom):
        return [frozenset({Clause(e.pred, e.args)})]
    if isinstance(e, Or):
        return [c for p in e.parts for c in _dnf(p)]
    if isinstance(e, And):
        acc = [frozenset()]
        for p in e.parts:
            acc = [a | b for a in acc for b in _dnf(p)]
            if not acc:
                break
        return acc
    fresh = {v: fresh_var(v.dim) for v in e.vars}
    return _dnf(substitute(e.body, fresh))


def normalize(head: Iterable[Var], body: PatternExpr) -> TaskSet:
    """Rewrite ``{head | body}`` as a union of conjunctive queries."""
    head = tuple(head)
    return taskset(make_cq(head, conj_) for conj_ in _dnf(body))


def to_pattern(cq: CQ) -> PatternExpr:
    """The body of ``cq`` as a pattern expression over its head variables."""
    return exists(cq.quantified, conj(*(Atom(c.pred, c.args) for c in cq.clauses)))


def taskset_pattern(t: TaskSet) -> PatternExpr:
    return disj(*(to_pattern(cq) for cq in t.disjuncts))


# ---------------------------------------------------------------------------
# containment


@dataclass(frozen=True)
class Homomorphism:
    mapping: tuple[tuple[Var, Var], ...]

    def as_dict(self) -> dict:
        return dict(self.mapping)

    def __str__(self):
        return ", ".join(f"{a.name}->{b.name}" for a, b in self.mapping)


@lru_cache(maxsize=200_000)
def _search(p: CQ, q: CQ, strict: bool):
    dims: dict[str, int] = {}
    p_vars = list(p.head) + list(p.quantified)
    p_id = {v: i for i, v in enumerate(p_vars)}
    q_vars = list(q.head) + list(q.quantified)
    q_id = {v: i for i, v in enumerate(q_vars)}
    p_dims = [dims.setdefault(v.dim, len(dims)) for v in p_vars]
    q_dims = [dims.setdefault(v.dim, len(dims)) for v in q_vars]

    by_pred: dict[str, list[int]] = {}
    p_cl_off, p_cl_args = [0], []
    for i, c in enumerate(p.clauses):
        by_pred.setdefault(c.pred, []).append(i)
        p_cl_args.extend(p_id[v] for v in c.args)
        p_cl_off.append(len(p_cl_args))

    q_clauses = sorted(q.clauses, key=lambda c: (len(by_pred.get(c.pred, ())), -len(c.args)))
    if any(c.pred not in by_pred for c in q_clauses):
        return None
    q_cl_off, q_cl_args, cand_off, cand = [0], [], [0], []
    for c in q_clauses:
        q_cl_args.extend(q_id[v] for v in c.args)
        q_cl_off.append(len(q_cl_args))
        cand.extend(by_pred[c.pred])
        cand_off.append(len(cand))

    h = find_hom([p_id[v] for v in p.head], p_dims, [q_id[v] for v in q.head], q_dims,
                 q_cl_off, q_cl_args, cand_off, cand, p_cl_off, p_cl_args, strict)
    if h is None:
        return None
    return Homomorphism(tuple((q_vars[i], p_vars[t]) for i, t in enumerate(h) if t >= 0))


def cq_contained(p: CQ, q: CQ, strict: bool = False) -> Homomorphism | None:
    """Witness that ``p`` is contained in ``q``: a dimension-preserving map from
    the variables of ``q`` to those of ``p`` sending clauses to clauses and
    covering the head of ``p``.  With ``strict`` the head must map positionally
    (plain tuple-set containment, no sub-tuples or permutations)."""
    return _search(p, q, strict)


def ucq_contained(p: TaskSet, q: TaskSet, strict: bool = False) -> bool:
    return all(any(cq_contained(a, b, strict) is not None for b in q.disjuncts) for a in p.disjuncts)


def ucq_witnesses(p: TaskSet, q: TaskSet, strict: bool = False):
    """One ``(p_disjunct, q_disjunct, homomorphism)`` per disjunct of ``p`` (or ``None``)."""
    out = []
    for a in p.disjuncts:
        for b in q.disjuncts:
            h = cq_contained(a, b, strict)
            if h is not None:
                out.append((a, b, h))
                break
        else:
            return None
    return out


def minimize_cq(cq: CQ, strict: bool = False) -> CQ:
    clauses = list(cq.clauses)
    cur = cq
    changed = True
    while changed:
        changed = False
        for i in range(len(clauses)):
            trial = make_cq(cq.head, clauses[:i] + clauses[i + 1:])
            if cq_contained(trial, cur, strict) is not None:
                clauses = list(trial.clauses)
                cur = trial
                changed = True
                break
    return cur


def simplify(t: TaskSet, strict: bool = False) -> TaskSet:
    """Minimize every disjunct, then drop disjuncts contained in another one."""
    cqs = sorted({minimize_cq(cq, strict) for cq in t.disjuncts}, key=str)
    keep = []
    for i, a in enumerate(cqs):
        dominated = False
        for j, b in enumerate(cqs):
            if i == j or cq_contained(a, b, strict) is None:
                continue
            if j < i or cq_contained(b, a, strict) is None:
                dominated = True
                break
        if not dominated:
            keep.append(a)
    return TaskSet(tuple(keep))


class CostOrdering(enum.Enum):
    STRICTLY_CONTAINED = "StrictlyContained"
    STRICTLY_CONTAINS = "StrictlyContains"
    EQUIVALENT = "Equivalent"
    INCOMPARABLE = "Incomparable"

    def flip(self) -> "CostOrdering":
        return {CostOrdering.STRICTLY_CONTAINED: CostOrdering.STRICTLY_CONTAINS,
                CostOrdering.STRICTLY_CONTAINS: CostOrdering.STRICTLY_CONTAINED}.get(self, self)


@dataclass(frozen=True)
class Context:
    sunk: TaskSet = EMPTY
    assumptions: tuple[tuple[Clause, ...], ...] = ()


EMPTY_CONTEXT = Context()


def assume(t: TaskSet, assumptions) -> TaskSet:
    if not assumptions:
        return t
    out = []
    for cq in t.disjuncts:
        extra = []
        for clause_set in assumptions:
            vs = {v for c in clause_set for v in c.args}
            ren = {v: fresh_var(v.dim) for v in vs}
            extra += [Clause(c.pred, tuple(ren[v] for v in c.args)) for c in clause_set]
        out.append(make_cq(cq.head, cq.clauses + tuple(extra)))
    return taskset(out)


def prepare(t: TaskSet, ctx: Context = EMPTY_CONTEXT) -> TaskSet:
    """Add sunk costs and assumptions, then simplify."""
    return simplify(assume(union(t, ctx.sunk), ctx.assumptions))


def order(p: TaskSet, q: TaskSet) -> CostOrdering:
    pq, qp = ucq_contained(p, q), ucq_contained(q, p)
    if pq and qp:
        return CostOrdering.EQUIVALENT
    if pq:
        return CostOrdering.STRICTLY_CONTAINED
    if qp:
        return CostOrdering.STRICTLY_CONTAINS
    return CostOrdering.INCOMPARABLE


def compare(p: TaskSet, q: TaskSet, ctx: Context = EMPTY_CONTEXT) -> CostOrdering:
    return order(prepare(p, ctx), prepare(q, ctx))


def equivalent(p: TaskSet, q: TaskSet) -> bool:
    return ucq_contained(p, q) and ucq_contained(q, p)


def default_context(program) -> Context:
    """Reading every sparse input and iterating any single dimension are sunk;
    every sparse input is assumed nonempty."""
    sunk, assumptions = [], []
    for d in program.decls:
        if d.kind.value != "input" or not d.is_sparse:
            continue
        head = _mode_vars(d.dims)
        sunk.append(make_cq(head, [Clause(d.name, head)]))
        qs = tuple(Var(f"{v.name}'", v.dim) for v in head)
        assumptions.append((Clause(d.name, qs),))
    for dim in program.dims:
        sunk.append(make_cq([Var(dim.lower(), dim)], []))
    return Context(taskset(sunk), tuple(assumptions))


def _mode_vars(dims) -> tuple[Var, ...]:
    seen: Counter = Counter()
    out = []
    for dim in dims:
        seen[dim] += 1
        out.append(Var(dim.lower() if seen[dim] == 1 else f"{dim.lower()}{seen[dim]}", dim))
    return tuple(out)


# ---------------------------------------------------------------------------
# concrete semantics (oracles)


def eval_full(cq: CQ, patterns: dict, dim_sizes: dict) -> set[tuple]:
    """Head value tuples satisfying ``cq`` on a concrete instance."""
    for c in cq.clauses:
        if c.pred not in patterns:
            raise KeyError(f"no pattern bound for predicate {c.pred}")
    for v in cq.head + cq.quantified:
        if v.dim not in dim_sizes:
            raise KeyError(f"no size for dimension {v.dim}")
    clauses = list(cq.clauses)
    out: set[tuple] = set()
    index_cache: dict = {}

    def candidates(c, env):
        bound = tuple(i for i, v in enumerate(c.args) if v in env)
        key = (c.pred, bound)
        idx = index_cache.get(key)
        if idx is None:
            idx = {}
            for t in patterns[c.pred]:
                idx.setdefault(tuple(t[i] for i in bound), []).append(t)
            index_cache[key] = idx
        return idx.get(tuple(env[c.args[i]] for i in bound), ())

    def rec(env, remaining):
        if not remaining:
            free = [v for v in cq.head if v not in env]
            for vals in itertools.product(*(range(dim_sizes[v.dim]) for v in free)):
                full = {**env, **dict(zip(free, vals))}
                out.add(tuple(full[v] for v in cq.head))
            return
        # most constrained clause first
        c = max(remaining, key=lambda c: sum(v in env for v in c.args))
        rest = [x for x in remaining if x is not c]
        for t in candidates(c, env):
            new = dict(env)
            ok = True
            for v, val in zip(c.args, t):
                if new.setdefault(v, val) != val:
                    ok = False
                    break
            if ok:
                rec(new, rest)

    rec({}, clauses)
    return out


def eval_taskset_full(t: TaskSet, patterns: dict, dim_sizes: dict) -> set[tuple]:
    out = set()
    for cq in t.disjuncts:
        out |= eval_full(cq, patterns, dim_sizes)
    return out


def eval_expansion(t: TaskSet, patterns: dict, dim_sizes: dict) -> set[tuple]:
    """Every task in the lazy expansion of ``t``, as tuples of ``(dim, value)``."""
    out = set()
    for cq in t.disjuncts:
        for vals in eval_full(cq, patterns, dim_sizes):
            labeled = [(v.dim, x) for v, x in zip(cq.head, vals)]
            for r in range(len(labeled) + 1):
                out.update(itertools.permutations(labeled, r))
    return out


def _signatures(*sets: TaskSet) -> dict[str, tuple[str, ...]]:
    sig: dict[str, tuple[str, ...]] = {}
    for t in sets:
        for cq in t.disjuncts:
            for c in cq.clauses:
                dims = tuple(v.dim for v in c.args)
                if sig.setdefault(c.pred, dims) != dims:
                    raise ValueError(f"predicate {c.pred} used with dimensions {sig[c.pred]} and {dims}")
    return sig


def all_patterns(signatures: dict, dim_sizes: dict):
    """Every assignment of Boolean patterns to the given predicates."""
    cells = [(p, coord) for p, dims in sorted(signatures.items())
             for coord in itertools.product(*(range(dim_sizes[d]) for d in dims))]
    for bits in range(1 << len(cells)):
        pats = {p: set() for p in signatures}
        for k, (p, coord) in enumerate(cells):
            if bits >> k & 1:
                pats[p].add(coord)
        yield pats


def brute_contained(p: TaskSet, q: TaskSet, dim_sizes: dict, max_cells: int = 16) -> bool:
    """Decide expansion containment by enumerating every pattern assignment.

    Vectorized over patterns: bit ``k`` of a pattern index says whether cell
    ``k`` (a predicate coordinate) is nonzero.
    """
    sig = _signatures(p, q)
    cells = {}
    for pred, dims in sorted(sig.items()):
        for coord in itertools.product(*(range(dim_sizes[d]) for d in dims)):
            cells[(pred, coord)] = len(cells)
    if len(cells) > max_cells:
        raise ValueError(f"instance too large: {len(cells)} cells > {max_cells}")
    npat = 1 << len(cells)
    ids = np.arange(npat, dtype=np.int64)
    bit = [((ids >> k) & 1).astype(bool) for k in range(len(cells))]
    ones = np.ones(npat, dtype=bool)

    def sat_rows(cq):
        vs = list(cq.head) + list(cq.quantified)
        for vals in itertools.product(*(range(dim_sizes[v.dim]) for v in vs)):
            env = dict(zip(vs, vals))
            s = ones
            for c in cq.clauses:
                s = s & bit[cells[(c.pred, tuple(env[v] for v in c.args))]]
            yield Counter((v.dim, env[v]) for v in cq.head), s

    q_rows = [row for cq in q.disjuncts for row in sat_rows(cq)]
    cover_cache: dict = {}
    for cq in p.disjuncts:
        for ms, s in sat_rows(cq):
            key = tuple(sorted(ms.items()))
            cover = cover_cache.get(key)
            if cover is None:
                cover = np.zeros(npat, dtype=bool)
                for qm, qs in q_rows:
                    if not ms - qm:
                        cover |= qs
                cover_cache[key] = cover
            if np.any(s & ~cover):
                return False
    return True


def brute_contained_literal(p: TaskSet, q: TaskSet, dim_sizes: dict, max_cells: int = 12) -> bool:
    """Same decision as :func:`brute_contained`, straight from the definition."""
    sig = _signatures(p, q)
    ncells = sum(int(np.prod([dim_sizes[d] for d in dims])) for dims in sig.values())
    if ncells > max_cells:
        raise ValueError(f"instance too large: {ncells} cells > {max_cells}")
    for pats in all_patterns(sig, dim_sizes):
        if not eval_expansion(p, pats, dim_sizes) <= eval_expansion(q, pats, dim_sizes):
            return False
    return True


# ---------------------------------------------------------------------------
# text form

_CQ_RE = re.compile(r"\{\s*\[(?P<head>[^\]]*)\]\s*\|\s*(?P<body>[^}]*)\}")


def parse_taskset(text: str, signatures: dict | None = None) -> TaskSet:
    """Parse the canonical text form.  Quantified variables take their dimension
    from an explicit ``k1:K`` annotation or from ``signatures`` (pred -> dims)."""
    signatures = signatures or {}
    text = text.strip()
    if text == "{}":
        return EMPTY
    cqs = []
    pos = 0
    for part in _split_union(text):
        m = _CQ_RE.fullmatch(part.strip())
        if not m:
            raise ValueError(f"cannot parse task set near {part!r}")
        vars_: dict[str, Var] = {}
        head = []
        for item in filter(None, (s.strip() for s in m.group("head").split(","))):
            name, dim = (s.strip() for s in item.split(":"))
            vars_[name] = Var(name, dim)
            head.append(vars_[name])
        body = m.group("body").strip()
        annotated = {}
        if body.startswith("exists"):
            qpart, body = body[len("exists"):].split(".", 1)
            for item in filter(None, (s.strip() for s in qpart.split(","))):
                if ":" in item:
                    name, dim = (s.strip() for s in item.split(":"))
                    annotated[name] = dim
                else:
                    annotated[item] = None
        clauses = []
        if body.strip() != "true":
            for atom in filter(None, (s.strip() for s in body.split("&"))):
                am = re.fullmatch(r"(\w+)\(([^)]*)\)", atom)
                if not am:
                    raise ValueError(f"bad clause {atom!r}")
                pred = am.group(1)
                names = [s.strip() for s in am.group(2).split(",") if s.strip()]
                args = []
                for k, n in enumerate(names):
                    if n not in vars_:
                        dim = annotated.get(n) or signatures.get(pred, (None,) * len(names))[k]
                        if dim is None:
                            raise ValueError(f"no dimension known for {n}")
                        vars_[n] = Var(n, dim)
                    args.append(vars_[n])
                clauses.append(Clause(pred, tuple(args)))
        cqs.append(make_cq(head, clauses))
        pos += 1
    return taskset(cqs)


def _split_union(text: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        if ch == "+" and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p for p in parts if p.strip()]
