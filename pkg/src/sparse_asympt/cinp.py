"""Protocolized concrete index notation: IR, text syntax, printer, validation.

A program is a list of tensor declarations plus one statement tree built from
``Forall``, ``Where`` and ``Assign`` nodes.  Accesses carry one protocol per
mode (step/locate for reads, append/insert for writes).

Text form::

    tensor B {I, K} format (c, c)
    tensor C {K, J} format (c, c) order (2, 1)
    forall i, k, j: A[a i, i j] += B[s i, s k] * C[s k, s j]
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Union


class Format(enum.Enum):
    UNCOMPRESSED = "u"
    COMPRESSED = "c"
    HASH = "h"


class Protocol(enum.Enum):
    STEP = "s"
    LOCATE = "l"
    APPEND = "a"
    INSERT = "i"
    UNSPECIFIED = ""

    @property
    def is_read(self) -> bool:
        return self in (Protocol.STEP, Protocol.LOCATE)

    @property
    def is_write(self) -> bool:
        return self in (Protocol.APPEND, Protocol.INSERT)


READ_SUPPORT = {
    Format.UNCOMPRESSED: frozenset({Protocol.LOCATE}),
    Format.COMPRESSED: frozenset({Protocol.STEP}),
    Format.HASH: frozenset({Protocol.STEP, Protocol.LOCATE}),
}
WRITE_SUPPORT = {
    Format.UNCOMPRESSED: frozenset({Protocol.APPEND, Protocol.INSERT}),
    Format.COMPRESSED: frozenset({Protocol.APPEND}),
    Format.HASH: frozenset({Protocol.APPEND, Protocol.INSERT}),
}


def supports(fmt: Format, protocol: Protocol) -> bool:
    if protocol is Protocol.UNSPECIFIED:
        return True
    table = READ_SUPPORT if protocol.is_read else WRITE_SUPPORT
    return protocol in table[fmt]


def minimal_format(reads, write=None, allowed=tuple(Format)) -> Format | None:
    """Cheapest level format supporting every protocol in ``reads`` and ``write``."""
    for fmt in (Format.UNCOMPRESSED, Format.COMPRESSED, Format.HASH):
        if fmt not in allowed:
            continue
        if all(supports(fmt, p) for p in reads) and (write is None or supports(fmt, write)):
            return fmt
    return None


class Kind(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    WORKSPACE = "workspace"


@dataclass(frozen=True)
class TensorDecl:
    name: str
    dims: tuple[str, ...]
    formats: tuple[Format, ...]
    # mode_order[level] is the logical mode stored at that level (0-based)
    mode_order: tuple[int, ...] = None
    kind: Kind = Kind.INPUT

    def __post_init__(self):
        if self.mode_order is None:
            object.__setattr__(self, "mode_order", tuple(range(len(self.dims))))
        if not (len(self.formats) == len(self.dims) == len(self.mode_order)):
            raise CinpError(f"tensor {self.name}: dims, formats and order differ in length")
        if sorted(self.mode_order) != list(range(len(self.dims))):
            raise CinpError(f"tensor {self.name}: order is not a permutation")

    @property
    def rank(self) -> int:
        return len(self.dims)

    def level_of(self, mode: int) -> int:
        return self.mode_order.index(mode)

    def format_of_mode(self, mode: int) -> Format:
        return self.formats[self.level_of(mode)]

    @property
    def is_sparse(self) -> bool:
        return any(f is not Format.UNCOMPRESSED for f in self.formats)


@dataclass(frozen=True)
class Index:
    var: str
    protocol: Protocol = Protocol.UNSPECIFIED


@dataclass(frozen=True)
class Access:
    tensor: str
    indices: tuple[Index, ...] = ()

    @property
    def vars(self) -> tuple[str, ...]:
        return tuple(ix.var for ix in self.indices)

    @property
    def protocols(self) -> tuple[Protocol, ...]:
        return tuple(ix.protocol for ix in self.indices)

    @property
    def key(self) -> tuple:
        return (self.tensor, self.vars)

    def with_protocols(self, protocols) -> "Access":
        return Access(self.tensor, tuple(Index(v, p) for v, p in zip(self.vars, protocols)))


@dataclass(frozen=True)
class Literal:
    value: Union[int, float]


class Op(enum.Enum):
    ADD = "+"
    MUL = "*"


@dataclass(frozen=True)
class Call:
    op: Op
    args: tuple

    def __post_init__(self):
        if len(self.args) != 2:
            raise CinpError("calls are binary")


Expr = Union[Access, Literal, Call]


class AssignOp(enum.Enum):
    OVERWRITE = "="
    ADD = "+="


@dataclass(frozen=True)
class Forall:
    vars: tuple[str, ...]
    body: "Stmt"


@dataclass(frozen=True)
class Where:
    consumer: "Stmt"
    producer: "Stmt"


@dataclass(frozen=True)
class Assign:
    lhs: Access
    op: AssignOp
    rhs: Expr


Stmt = Union[Forall, Where, Assign]


@dataclass(frozen=True)
class Program:
    decls: tuple[TensorDecl, ...]
    root: Stmt
    _by_name: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {d.name: d for d in self.decls})

    def decl(self, name: str) -> TensorDecl:
        try:
            return self._by_name[name]
        except KeyError:
            raise CinpError(f"unknown tensor {name!r}") from None

    def has(self, name: str) -> bool:
        return name in self._by_name

    @property
    def dims(self) -> tuple[str, ...]:
        seen = []
        for d in self.decls:
            for dim in d.dims:
                if dim not in seen:
                    seen.append(dim)
        return tuple(seen)

    def index_dims(self) -> dict[str, str]:
        """Map every index variable to the dimension it ranges over."""
        out: dict[str, str] = {}
        for acc, _ in stmt_accesses(self.root):
            d = self.decl(acc.tensor)
            for var, dim in zip(acc.vars, d.dims):
                if out.setdefault(var, dim) != dim:
                    raise CinpError(f"index {var} used for dimensions {out[var]} and {dim}")
        return out

    def __str__(self):
        return print_program(self)


class CinpError(ValueError):
    """Semantic error in a program (unknown tensor, arity, binding...)."""


class CinpSyntaxError(CinpError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# traversal helpers


def expr_accesses(e: Expr) -> Iterator[Access]:
    if isinstance(e, Access):
        yield e
    elif isinstance(e, Call):
        for a in e.args:
            yield from expr_accesses(a)


def stmt_accesses(s: Stmt) -> Iterator[tuple[Access, bool]]:
    """Yield ``(access, is_write)`` for every access under ``s``."""
    if isinstance(s, Forall):
        yield from stmt_accesses(s.body)
    elif isinstance(s, Where):
        yield from stmt_accesses(s.consumer)
        yield from stmt_accesses(s.producer)
    else:
        yield s.lhs, True
        for a in expr_accesses(s.rhs):
            yield a, False


def assignments(s: Stmt) -> Iterator[tuple[Assign, tuple[str, ...]]]:
    """Yield each assignment with the loop variables enclosing it, outermost first."""

    def walk(node, loops):
        if isinstance(node, Forall):
            yield from walk(node.body, loops + node.vars)
        elif isinstance(node, Where):
            yield from walk(node.consumer, loops)
            yield from walk(node.producer, loops)
        else:
            yield node, loops

    yield from walk(s, ())


def write_scopes(s: Stmt) -> Iterator[tuple[Assign, tuple[str, ...]]]:
    """Like :func:`assignments`, but a producer's loops start at its where,
    since the workspace it writes is created there."""

    def walk(node, loops):
        if isinstance(node, Forall):
            yield from walk(node.body, loops + node.vars)
        elif isinstance(node, Where):
            yield from walk(node.consumer, loops)
            yield from walk(node.producer, ())
        else:
            yield node, loops

    yield from walk(s, ())


def result_tensor(s: Stmt) -> str:
    while not isinstance(s, Assign):
        s = s.body if isinstance(s, Forall) else s.consumer
    return s.lhs.tensor


def depth(s: Stmt) -> int:
    """Maximum number of loop variables on any root-to-leaf path."""
    if isinstance(s, Forall):
        return len(s.vars) + depth(s.body)
    if isinstance(s, Where):
        return max(depth(s.consumer), depth(s.producer))
    return 0


def workspaces(s: Stmt) -> list[str]:
    out = []
    if isinstance(s, Forall):
        out += workspaces(s.body)
    elif isinstance(s, Where):
        out += workspaces(s.consumer)
        out.append(result_tensor(s.producer))
        out += workspaces(s.producer)
    return out


def infer_kinds(decls, root: Stmt) -> tuple[TensorDecl, ...]:
    ws = set(workspaces(root))
    out_name = result_tensor(root)
    res = []
    for d in decls:
        kind = Kind.WORKSPACE if d.name in ws else Kind.OUTPUT if d.name == out_name else Kind.INPUT
        res.append(replace(d, kind=kind))
    return tuple(res)


def make_program(decls, root: Stmt) -> Program:
    return Program(infer_kinds(decls, root), root)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>#[^\n]*)"
    r"|(?P<num>\d+(?:\.\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9']*)"
    r"|(?P<op>\+=|[{}()\[\],:=+*])"
)
_KEYWORDS = {"tensor", "format", "order", "forall", "where"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise CinpSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.decls: dict[str, TensorDecl] = {}

    def peek(self, k=0) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise CinpSyntaxError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if t.text != text or t.kind == "eof":
            self.error(f"expected {text!r}, found {t.text or 'end of input'!r}")
        return self.next()

    def name(self) -> _Tok:
        t = self.peek()
        if t.kind != "name" or t.text in _KEYWORDS:
            self.error(f"expected a name, found {t.text or 'end of input'!r}")
        return self.next()

    def accept(self, text: str) -> bool:
        if self.peek().text == text and self.peek().kind != "eof":
            self.i += 1
            return True
        return False

    def program(self) -> Program:
        while self.peek().text == "tensor":
            self.decl()
        if self.peek().kind == "eof":
            self.error("missing statement")
        root = self.stmt(bound=())
        if self.peek().kind != "eof":
            self.error(f"unexpected {self.peek().text!r}")
        return make_program(tuple(self.decls.values()), root)

    def decl(self):
        self.expect("tensor")
        tok = self.name()
        if tok.text in self.decls:
            self.error(f"tensor {tok.text} declared twice", tok)
        dims = self.comma_list("{", "}", lambda: self.name().text)
        self.expect("format")
        fmts = []
        for t in self.comma_list("(", ")", self.next):
            try:
                fmts.append(Format(t.text))
            except ValueError:
                self.error(f"unknown format {t.text!r}", t)
        order = None
        if self.accept("order"):
            order = []
            for t in self.comma_list("(", ")", self.next):
                if t.kind != "num":
                    self.error("order entries must be integers", t)
                order.append(int(t.text) - 1)
            order = tuple(order)
        try:
            self.decls[tok.text] = TensorDecl(tok.text, tuple(dims), tuple(fmts), order)
        except CinpError as exc:
            self.error(str(exc), tok)

    def comma_list(self, open_, close, item):
        self.expect(open_)
        out = []
        if self.accept(close):
            return out
        out.append(item())
        while self.accept(","):
            out.append(item())
        self.expect(close)
        return out

    def stmt(self, bound):
        t = self.peek()
        if t.text == "forall":
            self.next()
            vars_ = [self.name()]
            while self.accept(","):
                vars_.append(self.name())
            self.expect(":")
            names = []
            for v in vars_:
                if v.text in bound or v.text in names:
                    self.error(f"index {v.text} bound twice", v)
                names.append(v.text)
            return Forall(tuple(names), self.stmt(bound + tuple(names)))
        if t.text == "(":
            self.next()
            node = self.stmt(bound)
            self.expect(")")
            while self.accept("where"):
                self.expect("(")
                prod = self.stmt(bound)
                self.expect(")")
                node = Where(node, prod)
            return node
        lhs = self.access(write=True)
        op_tok = self.next()
        if op_tok.text not in ("=", "+="):
            self.error("expected '=' or '+='", op_tok)
        rhs = self.expr()
        if lhs.tensor in {a.tensor for a in expr_accesses(rhs)}:
            self.error(f"tensor {lhs.tensor} appears on both sides", t)
        return Assign(lhs, AssignOp(op_tok.text), rhs)

    def access(self, write: bool) -> Access:
        tok = self.name()
        if tok.text not in self.decls:
            self.error(f"unknown tensor {tok.text!r}", tok)
        decl = self.decls[tok.text]
        indices = []
        if self.accept("["):
            while True:
                first = self.name()
                if self.peek().kind == "name" and self.peek().text not in _KEYWORDS:
                    var = self.name()
                    try:
                        proto = Protocol(first.text)
                    except ValueError:
                        self.error(f"unknown protocol {first.text!r}", first)
                    if proto.is_read and write:
                        self.error(f"{proto.name.lower()} protocol on a write", first)
                    if proto.is_write and not write:
                        self.error(f"{proto.name.lower()} protocol on a read", first)
                    indices.append(Index(var.text, proto))
                else:
                    indices.append(Index(first.text))
                if not self.accept(","):
                    break
            self.expect("]")
        if len(indices) != decl.rank:
            self.error(f"tensor {tok.text} has rank {decl.rank}, accessed with {len(indices)} indices", tok)
        vars_ = [ix.var for ix in indices]
        if len(set(vars_)) != len(vars_):
            self.error(f"repeated index in access to {tok.text}", tok)
        return Access(tok.text, tuple(indices))

    def expr(self):
        terms = [self.term()]
        while self.accept("+"):
            terms.append(self.term())
        return _right_assoc(Op.ADD, terms)

    def term(self):
        factors = [self.factor()]
        while self.accept("*"):
            factors.append(self.factor())
        return _right_assoc(Op.MUL, factors)

    def factor(self):
        t = self.peek()
        if t.kind == "num":
            self.next()
            return Literal(float(t.text) if "." in t.text else int(t.text))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        return self.access(write=False)


def _right_assoc(op, items):
    node = items[-1]
    for it in reversed(items[:-1]):
        node = Call(op, (it, node))
    return node


def parse(text: str) -> Program:
    """Parse program text; raises :class:`CinpSyntaxError` with line/column."""
    return _Parser(text).program()


# ---------------------------------------------------------------------------
# printing


def print_access(a: Access) -> str:
    if not a.indices:
        return a.tensor
    parts = [f"{ix.protocol.value} {ix.var}" if ix.protocol.value else ix.var for ix in a.indices]
    return f"{a.tensor}[{', '.join(parts)}]"


def print_expr(e: Expr) -> str:
    if isinstance(e, Access):
        return print_access(e)
    if isinstance(e, Literal):
        return repr(e.value)
    left, right = e.args
    ls, rs = print_expr(left), print_expr(right)
    if isinstance(left, Call) and (left.op is e.op or left.op is Op.ADD):
        ls = f"({ls})"
    if isinstance(right, Call) and right.op is Op.ADD and e.op is Op.MUL:
        rs = f"({rs})"
    return f"{ls} {e.op.value} {rs}"


def print_stmt(s: Stmt) -> str:
    if isinstance(s, Forall):
        return f"forall {', '.join(s.vars)}: {print_stmt(s.body)}"
    if isinstance(s, Where):
        return f"({print_stmt(s.consumer)}) where ({print_stmt(s.producer)})"
    return f"{print_access(s.lhs)} {s.op.value} {print_expr(s.rhs)}"


def print_decl(d: TensorDecl) -> str:
    text = f"tensor {d.name} {{{', '.join(d.dims)}}} format ({', '.join(f.value for f in d.formats)})"
    if d.mode_order != tuple(range(d.rank)):
        text += f" order ({', '.join(str(m + 1) for m in d.mode_order)})"
    return text


def print_program(p: Program) -> str:
    return "\n".join([print_decl(d) for d in p.decls] + [print_stmt(p.root)]) + "\n"


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


def append_levels_ok(decl: TensorDecl, access: Access, loops: tuple[str, ...]) -> list[bool]:
    """Per storage level, whether writes through ``access`` under ``loops`` are lexicographic.

    Level ``l`` qualifies when the first ``l + 1`` enclosing loops are exactly the
    variables of levels ``0..l`` in level order.
    """
    level_vars = [access.vars[m] for m in decl.mode_order]
    return [tuple(loops[: l + 1]) == tuple(level_vars[: l + 1]) for l in range(decl.rank)]


def validate(p: Program) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def check_bindings(node, bound):
        if isinstance(node, Forall):
            for v in node.vars:
                if v in bound:
                    diags.append(Diagnostic("binding", f"index {v} bound twice"))
            check_bindings(node.body, bound + node.vars)
        elif isinstance(node, Where):
            check_bindings(node.consumer, bound)
            check_bindings(node.producer, bound)
        else:
            for acc in [node.lhs, *expr_accesses(node.rhs)]:
                for v in acc.vars:
                    if v not in bound:
                        diags.append(Diagnostic("binding", f"index {v} in {print_access(acc)} is not bound"))

    check_bindings(p.root, ())

    for acc, is_write in stmt_accesses(p.root):
        decl = p.decl(acc.tensor)
        for mode, ix in enumerate(acc.indices):
            if ix.protocol is Protocol.UNSPECIFIED:
                continue
            if ix.protocol.is_write != is_write:
                diags.append(Diagnostic("protocol", f"{ix.protocol.name.lower()} protocol in wrong position in {print_access(acc)}"))
            elif not supports(decl.format_of_mode(mode), ix.protocol):
                diags.append(Diagnostic(
                    "format",
                    f"protocol unsupported by format: {ix.protocol.name.lower()} on "
                    f"{decl.format_of_mode(mode).name.lower()} level of {print_access(acc)}",
                ))

    for stmt, loops in write_scopes(p.root):
        acc = stmt.lhs
        decl = p.decl(acc.tensor)
        ok = append_levels_ok(decl, acc, loops)
        for level, mode in enumerate(decl.mode_order):
            if acc.indices[mode].protocol is Protocol.APPEND and not ok[level]:
                diags.append(Diagnostic("append", f"append order violated in {print_access(acc)} under loops {', '.join(loops)}"))
                break

    outputs = [d for d in p.decls if d.kind is Kind.OUTPUT]
    if len(outputs) != 1:
        diags.append(Diagnostic("program", f"expected one output tensor, found {len(outputs)}"))
    return diags
