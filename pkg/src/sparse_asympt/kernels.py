"""Built-in kernels: one pointwise statement each, CSF inputs, dense vectors."""

from __future__ import annotations

from dataclasses import dataclass

from . import cinp
from .cinp import Access, AssignOp, Program


@dataclass(frozen=True)
class KernelSpec:
    name: str
    decls: tuple  # input and output declarations
    lhs: Access
    op: AssignOp
    rhs: cinp.Expr

    @property
    def indices(self) -> tuple[str, ...]:
        seen = []
        for a in [self.lhs, *cinp.expr_accesses(self.rhs)]:
            for v in a.vars:
                if v not in seen:
                    seen.append(v)
        return tuple(sorted(seen))

    @property
    def reductions(self) -> tuple[str, ...]:
        return tuple(v for v in self.indices if v not in self.lhs.vars)

    def reference(self) -> Program:
        """The unscheduled program: one loop nest in alphabetical order, no workspaces."""
        return cinp.make_program(self.decls, cinp.Forall(self.indices, cinp.Assign(self.lhs, self.op, self.rhs)))

    @classmethod
    def from_program(cls, name: str, p: Program) -> "KernelSpec":
        root = p.root
        while isinstance(root, cinp.Forall):
            root = root.body
        if not isinstance(root, cinp.Assign):
            raise cinp.CinpError("a kernel is a single assignment under foralls")
        strip = lambda a: Access(a.tensor, tuple(cinp.Index(v) for v in a.vars))
        return cls(name, p.decls, strip(root.lhs), root.op, _strip_expr(root.rhs, strip))


def _strip_expr(e, strip):
    if isinstance(e, Access):
        return strip(e)
    if isinstance(e, cinp.Call):
        return cinp.Call(e.op, tuple(_strip_expr(x, strip) for x in e.args))
    return e


SOURCES = {
    "spmv": """
        tensor a {I} format (u)
        tensor B {I, J} format (u, c)
        tensor c {J} format (u)
        forall i, j: a[i] += B[i, j] * c[j]
    """,
    "spmv2": """
        tensor a {I} format (u)
        tensor B {I, J} format (u, c)
        tensor C {J, K} format (u, c)
        tensor d {K} format (u)
        forall i, j, k: a[i] += B[i, j] * C[j, k] * d[k]
    """,
    "spgemm": """
        tensor A {I, J} format (u, c)
        tensor B {I, K} format (u, c)
        tensor C {K, J} format (u, c)
        forall i, j, k: A[i, j] += B[i, k] * C[k, j]
    """,
    "sddmm": """
        tensor A {I, J} format (u, c)
        tensor B {I, K} format (u, u)
        tensor C {K, J} format (u, u)
        tensor D {I, J} format (u, c)
        forall i, j, k: A[i, j] += B[i, k] * C[k, j] * D[i, j]
    """,
    "spmttkrp": """
        tensor A {I, J} format (u, c)
        tensor B {I, K, L} format (u, c, c)
        tensor C {K, J} format (u, c)
        tensor D {L, J} format (u, c)
        forall i, j, k, l: A[i, j] += B[i, k, l] * C[k, j] * D[l, j]
    """,
    "spgemm2": """
        tensor A {I, J} format (u, c)
        tensor B {I, K} format (u, c)
        tensor C {K, L} format (u, c)
        tensor D {L, J} format (u, c)
        forall i, j, k, l: A[i, j] += B[i, k] * C[k, l] * D[l, j]
    """,
    "spgemmh": """
        tensor A {I, J} format (u, c)
        tensor B {I, K} format (u, c)
        tensor C {K, J} format (u, c)
        tensor D {K, J} format (u, c)
        forall i, j, k: A[i, j] += B[i, k] * C[k, j] * D[k, j]
    """,
}


def kernel(name: str) -> KernelSpec:
    try:
        src = SOURCES[name.lower()]
    except KeyError:
        raise KeyError(f"unknown kernel {name!r}; choose from {', '.join(SOURCES)}") from None
    return KernelSpec.from_program(name.lower(), cinp.parse(src))


def load_kernel(name_or_text: str) -> KernelSpec:
    if name_or_text.lower() in SOURCES or "forall" not in name_or_text:
        return kernel(name_or_text)
    return KernelSpec.from_program("custom", cinp.parse(name_or_text))
