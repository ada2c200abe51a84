"""Reference interpreter for CIN-P that records the tasks it executes.

Tensors are stored as level trees (``SparseTensor``) at the boundary; during a
run every tensor is a map from logical coordinates to stored values.  A
forall coiterates the union of its steppers' projected coordinates and runs
the zero-annihilated body for whichever steppers are present, exactly the
case split made by :mod:`costmodel`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import cinp
from .cinp import Access, AssignOp, CinpError, Format, Literal, Op, Program, Protocol
from .costmodel import Loop, Scope, Update, access_label, annotate, steppers, zero_stmt
from .queries import eval_taskset_full


class InterpError(CinpError):
    """Protocol, format or append-order fault during execution."""


# ---------------------------------------------------------------------------
# level trees


@dataclass
class SparseTensor:
    decl: cinp.TensorDecl
    sizes: tuple[int, ...]  # extent per logical mode
    root: object = None

    @classmethod
    def from_entries(cls, decl, sizes, entries: dict) -> "SparseTensor":
        sizes = tuple(sizes)
        for coord in entries:
            if len(coord) != decl.rank or any(not 0 <= c < n for c, n in zip(coord, sizes)):
                raise ValueError(f"coordinate {coord} out of range for {decl.name}")
        by_level = {tuple(c[m] for m in decl.mode_order): v for c, v in entries.items()}
        t = cls(decl, sizes)
        t.root = t._build(0, sorted(by_level.items()))
        return t

    def _build(self, level, items):
        if level == self.decl.rank:
            return items[0][1] if items else 0
        fmt = self.decl.formats[level]
        n = self.sizes[self.decl.mode_order[level]]
        groups = {k: [(c, v) for c, v in g] for k, g in itertools.groupby(items, key=lambda cv: cv[0][level])}
        if fmt is Format.UNCOMPRESSED:
            return [self._build(level + 1, groups.get(x, [])) for x in range(n)]
        children = [(x, self._build(level + 1, g)) for x, g in sorted(groups.items())]
        if fmt is Format.COMPRESSED:
            return children
        return dict(children)

    def entries(self) -> dict:
        """Stored entries keyed by logical coordinate."""
        out = {}

        def walk(node, level, prefix):
            if level == self.decl.rank:
                if node != 0:
                    out[tuple(prefix[self.decl.level_of(m)] for m in range(self.decl.rank))] = node
                return
            fmt = self.decl.formats[level]
            if fmt is Format.UNCOMPRESSED:
                kids = enumerate(node)
            elif fmt is Format.COMPRESSED:
                kids = node
            else:
                kids = node.items()
            for x, child in kids:
                walk(child, level + 1, prefix + [x])

        if self.decl.rank == 0:
            return {(): self.root} if self.root != 0 else {}
        walk(self.root, 0, [])
        return out

    @property
    def nnz(self) -> int:
        return len(self.entries())

    def pattern(self) -> set:
        return set(self.entries())

    def dense(self) -> np.ndarray:
        a = np.zeros(self.sizes, dtype=np.int64)
        for c, v in self.entries().items():
            a[c] = v
        return a


def to_pattern(t: SparseTensor) -> set:
    """Boolean occupancy of ``t`` as a set of logical coordinates."""
    return t.pattern()


def gen_uniform(decl, dim_sizes: dict, density: float, seed=0, values=(1, 3)) -> SparseTensor:
    """Each coordinate nonzero with probability ``density``; values are small positive integers."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    sizes = tuple(dim_sizes[d] for d in decl.dims)
    mask = rng.random(sizes) < density
    vals = rng.integers(values[0], values[1] + 1, size=sizes)
    entries = {tuple(int(x) for x in c): int(vals[tuple(c)]) for c in np.argwhere(mask)}
    if decl.rank == 0:
        entries = {(): int(vals)} if bool(mask) else {}
    return SparseTensor.from_entries(decl, sizes, entries)


def write_tensor(t: SparseTensor) -> str:
    lines = ["dims " + " ".join(f"{d}={n}" for d, n in zip(t.decl.dims, t.sizes))]
    for c, v in sorted(t.entries().items()):
        lines.append(" ".join([*(str(x + 1) for x in c), str(v)]))
    return "\n".join(lines) + "\n"


def read_tensor(text: str, decl) -> SparseTensor:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("dims"):
        raise ValueError("tensor file must start with a 'dims' line")
    sizes = []
    for k, item in enumerate(lines[0].split()[1:]):
        name, n = item.split("=")
        if k >= decl.rank or name != decl.dims[k]:
            raise ValueError(f"dimension {name} does not match declaration of {decl.name}")
        sizes.append(int(n))
    if len(sizes) != decl.rank:
        raise ValueError(f"{decl.name} expects {decl.rank} dimensions")
    entries = {}
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != decl.rank + 1:
            raise ValueError(f"bad entry line {ln!r}")
        coord = tuple(int(x) - 1 for x in parts[:-1])
        if coord in entries:
            raise ValueError(f"duplicate coordinate {coord}")
        val = float(parts[-1])
        entries[coord] = int(val) if val.is_integer() else val
    return SparseTensor.from_entries(decl, sizes, entries)


# ---------------------------------------------------------------------------
# execution


@dataclass
class TaskTrace:
    coiteration: set = field(default_factory=set)  # (site, label, tuple)
    compute: set = field(default_factory=set)      # (site, tuple)

    def coiteration_by_site(self) -> dict:
        out: dict = {}
        for site, label, t in self.coiteration:
            out.setdefault((site, label), set()).add(t)
        return out

    def compute_by_site(self) -> dict:
        out: dict = {}
        for site, t in self.compute:
            out.setdefault(site, set()).add(t)
        return out

    @property
    def total(self) -> int:
        return len(self.coiteration) + len(self.compute)


class _Machine:
    def __init__(self, p: Program, data: dict, sizes: dict, strict: bool):
        self.p = p
        self.data = data
        self.sizes = sizes
        self.strict = strict
        self.idx_dims = p.index_dims()
        self.trace = TaskTrace()
        self.proj_cache: dict = {}
        self.case_cache: dict = {}
        self.last_write: dict = {}

    def check_read(self, a: Access):
        d = self.p.decl(a.tensor)
        for m, ix in enumerate(a.indices):
            fmt = d.format_of_mode(m)
            proto = ix.protocol
            if proto is Protocol.UNSPECIFIED:
                if self.strict:
                    raise InterpError(f"unspecified protocol reading {access_label(a)}")
                continue
            if self.strict and not cinp.supports(fmt, proto):
                raise InterpError(f"{fmt.value} level of {a.tensor} cannot {proto.name.lower()}")

    def cases(self, node: Loop):
        hit = self.case_cache.get(id(node))
        if hit is None:
            steps = steppers(node.var, node.body)
            table = {}
            for mask in range(1, 1 << len(steps)):
                live = frozenset(a.key for k, a in enumerate(steps) if mask >> k & 1)
                zeros = frozenset(a.key for a in steps) - live
                table[live] = zero_stmt(node.body, zeros)
            hit = self.case_cache[id(node)] = (node, steps, table)
        return hit[1], hit[2]

    def projection(self, a: Access, var: str, env: dict):
        pos = a.vars.index(var)
        fixed = tuple(k for k, v in enumerate(a.vars) if v in env)
        key = (a.tensor, pos, fixed)
        index = self.proj_cache.get(key)
        if index is None:
            index = {}
            for c in self.data[a.tensor]:
                index.setdefault(tuple(c[k] for k in fixed), set()).add(c[pos])
            self.proj_cache[key] = index
        return index.get(tuple(env[a.vars[k]] for k in fixed), set())

    def invalidate(self, tensor):
        for k in [k for k in self.proj_cache if k[0] == tensor]:
            del self.proj_cache[k]

    def value(self, e, env):
        if isinstance(e, Literal):
            return e.value
        if isinstance(e, Access):
            return self.data[e.tensor].get(tuple(env[v] for v in e.vars), 0)
        a, b = (self.value(x, env) for x in e.args)
        return a + b if e.op is Op.ADD else a * b

    def write(self, node: Update, env: dict):
        a = node.lhs
        d = self.p.decl(a.tensor)
        coord = tuple(env[v] for v in a.vars)
        if self.strict:
            for m, ix in enumerate(a.indices):
                if ix.protocol is Protocol.UNSPECIFIED:
                    raise InterpError(f"unspecified protocol writing {access_label(a)}")
                if not cinp.supports(d.format_of_mode(m), ix.protocol):
                    raise InterpError(f"{d.format_of_mode(m).value} level of {a.tensor} cannot "
                                      f"{ix.protocol.name.lower()}")
            # append levels: the level-ordered prefix must arrive in lexicographic order
            levels = [a.indices[m].protocol for m in d.mode_order]
            n_app = 0
            while n_app < len(levels) and levels[n_app] is Protocol.APPEND:
                n_app += 1
            if n_app:
                prefix = tuple(coord[d.mode_order[lv]] for lv in range(n_app))
                last = self.last_write.get(a.tensor)
                if last is not None and prefix < last:
                    raise InterpError(f"append order violated writing {a.tensor} at {coord}")
                self.last_write[a.tensor] = prefix
        v = self.value(node.rhs, env)
        store = self.data[a.tensor]
        if node.op is AssignOp.ADD:
            store[coord] = store.get(coord, 0) + v
        else:
            store[coord] = v
        self.invalidate(a.tensor)

    def run(self, node, env: dict):
        if isinstance(node, Loop):
            bound = tuple(env.values())
            steps, table = self.cases(node)
            if not steps:
                n = self.sizes[self.idx_dims[node.var]]
                for x in range(n):
                    self.trace.coiteration.add((node.site, "*", bound + (x,)))
                    env[node.var] = x
                    self.run(node.body, env)
                    del env[node.var]
                return
            projs = []
            for a in steps:
                self.check_read(a)
                pr = self.projection(a, node.var, env)
                label = access_label(a)
                for x in pr:
                    self.trace.coiteration.add((node.site, label, bound + (x,)))
                projs.append((a.key, pr))
            for x in sorted(set().union(*(pr for _, pr in projs))):
                body = table[frozenset(k for k, pr in projs if x in pr)]
                if body is None:
                    continue
                env[node.var] = x
                self.run(body, env)
                del env[node.var]
        elif isinstance(node, Scope):
            w = node.workspace
            saved = self.data.get(w)
            self.data[w] = {}
            self.last_write.pop(w, None)
            self.invalidate(w)
            self.run(node.producer, env)
            self.run(node.consumer, env)
            if saved is None:
                del self.data[w]
            else:
                self.data[w] = saved
            self.invalidate(w)
        else:
            for a in cinp.expr_accesses(node.rhs):
                self.check_read(a)
            self.trace.compute.add((node.site, tuple(env.values())))
            self.write(node, env)


def run(p: Program, inputs: dict, dim_sizes: dict, strict: bool = True):
    """Execute ``p``; returns ``(outputs, trace)`` with outputs as ``SparseTensor``s."""
    if strict:
        bad = [d for d in cinp.validate(p)]
        if bad:
            raise InterpError("; ".join(d.message for d in bad))
    data = {}
    for d in p.decls:
        if d.kind is cinp.Kind.INPUT:
            if d.name not in inputs:
                raise InterpError(f"missing input {d.name}")
            t = inputs[d.name]
            if tuple(t.decl.dims) != tuple(d.dims):
                raise InterpError(f"input {d.name} has dimensions {t.decl.dims}")
            data[d.name] = dict(t.entries())
        elif d.kind is cinp.Kind.OUTPUT:
            data[d.name] = {}
    m = _Machine(p, data, dim_sizes, strict)
    root = zero_stmt(annotate(p))
    if root is not None:
        m.run(root, {})
    outputs = {}
    for d in p.decls:
        if d.kind is cinp.Kind.OUTPUT:
            sizes = tuple(dim_sizes[x] for x in d.dims)
            entries = {c: v for c, v in data[d.name].items() if v != 0}
            outputs[d.name] = SparseTensor.from_entries(d, sizes, entries)
    return outputs, m.trace


def random_instance(p: Program, n: int, density: float, seed: int):
    """Uniform inputs for every input tensor of ``p`` over square dimensions of extent ``n``."""
    sizes = {dim: n for dim in p.dims}
    inputs = {}
    for k, d in enumerate(x for x in p.decls if x.kind is cinp.Kind.INPUT):
        inputs[d.name] = gen_uniform(d, sizes, density, seed=(seed, k))
    return inputs, sizes


@dataclass
class Mismatch:
    key: object
    missing: set   # predicted but not executed
    extra: set     # executed but not predicted

    def example(self):
        return sorted(self.missing or self.extra)[0]


def check_trace(cost, trace: TaskTrace, inputs: dict, dim_sizes: dict) -> list[Mismatch]:
    """Compare every per-site task set of ``cost`` with the executed tasks."""
    patterns = {name: t.pattern() for name, t in inputs.items()}
    out = []
    actual_c = trace.coiteration_by_site()
    actual_s = trace.compute_by_site()
    pairs = [(k, cost.coiteration.get(k), actual_c.get(k, set())) for k in set(cost.coiteration) | set(actual_c)]
    pairs += [(k, cost.compute.get(k), actual_s.get(k, set())) for k in set(cost.compute) | set(actual_s)]
    for key, derived, actual in sorted(pairs, key=lambda x: str(x[0])):
        want = eval_taskset_full(derived, patterns, dim_sizes) if derived is not None else set()
        if want != actual:
            out.append(Mismatch(key, want - actual, actual - want))
    return out
