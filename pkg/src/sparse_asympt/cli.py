"""``sparse-asympt`` command line: check, cost, compare, schedule, validate, gen."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import cinp
from .costmodel import derive_cost
from .interp import gen_uniform, random_instance, read_tensor, run, check_trace, write_tensor
from .kernels import load_kernel, SOURCES
from .queries import EMPTY, Context, CostOrdering, compare, default_context, prepare, ucq_witnesses
from .scheduler import PipelineOptions, count_min_depth, schedule


class DomainError(Exception):
    pass


def _read_program(path: str) -> cinp.Program:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise DomainError(f"{path}: {e.strerror}") from None
    try:
        return cinp.parse(text)
    except cinp.CinpError as e:
        raise DomainError(f"{path}:{e}") from None


def _emit(args, payload: dict, text: str):
    if args.json is None:
        print(text)
        return
    out = json.dumps(payload, indent=2, sort_keys=True)
    if args.json == "-":
        print(out)
    else:
        Path(args.json).write_text(out + "\n")
        print(text)


def _context(p: cinp.Program, args) -> Context:
    full = default_context(p)
    return Context(full.sunk if args.sunk == "default" else EMPTY,
                   full.assumptions if args.assume == "nonempty" else ())


def _site_key(key) -> str:
    return key if isinstance(key, str) else f"{key[0]} {key[1]}"


# ---------------------------------------------------------------------------
# commands


def cmd_check(args) -> int:
    p = _read_program(args.file)
    diags = cinp.validate(p)
    _emit(args, {"file": args.file, "diagnostics": [{"code": d.code, "message": d.message} for d in diags]},
          "\n".join(str(d) for d in diags) if diags else "ok")
    return 1 if diags else 0


def cmd_cost(args) -> int:
    p = _read_program(args.file)
    try:
        cost = derive_cost(p)
    except cinp.CinpError as e:
        raise DomainError(str(e)) from None
    ctx = _context(p, args)
    total = prepare(cost.total, ctx)
    sites = [(_site_key(k), t) for k, t in cost.sites()]
    lines = [f"{k}: {t}" for k, t in sites] + [f"total: {total}"]
    payload = {"sites": {k: t.to_json() for k, t in sites}, "total": total.to_json(),
               "context": {"sunk": args.sunk, "assume": args.assume}}
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_compare(args) -> int:
    pa, pb = _read_program(args.a), _read_program(args.b)
    try:
        ca, cb = derive_cost(pa).total, derive_cost(pb).total
    except cinp.CinpError as e:
        raise DomainError(str(e)) from None
    ctx = _context(pa, args)
    ctx_b = _context(pb, args)
    # both programs compute the same kernel, but take the union in case
    # their inputs are declared differently
    ctx = Context(ctx.sunk | ctx_b.sunk, tuple(dict.fromkeys(ctx.assumptions + ctx_b.assumptions)))
    verdict = compare(ca, cb, ctx)
    ta, tb = prepare(ca, ctx), prepare(cb, ctx)
    lines = [verdict.value]
    witnesses = {}
    for label, x, y, holds in (("a<=b", ta, tb, verdict in (CostOrdering.STRICTLY_CONTAINED, CostOrdering.EQUIVALENT)),
                               ("b<=a", tb, ta, verdict in (CostOrdering.STRICTLY_CONTAINS, CostOrdering.EQUIVALENT))):
        if not holds:
            continue
        ws = ucq_witnesses(x, y)
        witnesses[label] = [{"disjunct": str(x), "into": str(y), "map": {a.name: b.name for a, b in h.mapping}}
                            for x, y, h in ws]
        lines.append(f"{label}:")
        lines += [f"  {x}  <=  {y}  via {h}" for x, y, h in ws]
    _emit(args, {"verdict": verdict.value, "a": str(ta), "b": str(tb), "witnesses": witnesses}, "\n".join(lines))
    return 0


def cmd_schedule(args) -> int:
    try:
        spec = load_kernel(Path(args.kernel).read_text() if Path(args.kernel).is_file() else args.kernel)
    except KeyError as e:
        raise DomainError(e.args[0]) from None
    except cinp.CinpError as e:
        raise DomainError(str(e)) from None
    opts = PipelineOptions(taco=args.taco, max_stage_programs=args.max_candidates, seed=args.seed,
                           empirical=args.empirical, dims=args.dims, density=args.density,
                           trials=args.trials, context=args.sunk)
    res = schedule(spec, opts)
    payload = res.to_json()
    lines = [f"kernel {spec.name}" + (" (taco)" if args.taco else "")]
    for s in res.trace.stages:
        flag = "  TRUNCATED" if s["truncated"] else ""
        lines.append(f"  {s['stage']:<11} {s['count']:>9}  {s['seconds']:.3f}s{flag}")
    if args.count:
        n = count_min_depth(spec, args.taco)
        payload["min_depth_count"] = n
        lines.append(f"  min-depth schedules (counted): {n}")
    best = res.ranked if res.ranked is not None else [(p, None) for p in res.final]
    for k, (p, n) in enumerate(best[:args.show]):
        lines.append(f"\n# {k + 1}" + (f"  tasks={n}" if n is not None else ""))
        lines.append(str(p))
    _emit(args, payload, "\n".join(lines))
    return 0


def _load_inputs(p: cinp.Program, folder: str):
    inputs, sizes = {}, {}
    for d in p.decls:
        if d.kind is not cinp.Kind.INPUT:
            continue
        f = Path(folder) / f"{d.name}.tns"
        try:
            t = read_tensor(f.read_text(), d)
        except OSError as e:
            raise DomainError(f"{f}: {e.strerror}") from None
        inputs[d.name] = t
        sizes.update(zip(d.dims, t.sizes))
    return inputs, sizes


def cmd_validate(args) -> int:
    p = _read_program(args.file)
    try:
        cost = derive_cost(p)
    except cinp.CinpError as e:
        raise DomainError(str(e)) from None
    if args.inputs:
        instances = [_load_inputs(p, args.inputs)]
    else:
        instances = [random_instance(p, args.dims, args.density, args.seed + t) for t in range(args.trials)]
    reports = []
    failed = None
    for k, (inputs, sizes) in enumerate(instances):
        try:
            _, trace = run(p, inputs, sizes)
        except cinp.CinpError as e:
            raise DomainError(str(e)) from None
        bad = check_trace(cost, trace, inputs, sizes)
        reports.append({"trial": k, "tasks": trace.total, "mismatches": len(bad)})
        if bad and failed is None:
            m = bad[0]
            failed = {"trial": k, "site": _site_key(m.key), "tuple": list(m.example()),
                      "kind": "missing" if m.missing else "extra"}
    if failed is None:
        text = f"PASS ({len(instances)} trials, {sum(r['tasks'] for r in reports)} tasks)"
    else:
        text = (f"FAIL trial {failed['trial']} at {failed['site']}: "
                f"{failed['kind']} task {tuple(failed['tuple'])}")
    _emit(args, {"pass": failed is None, "trials": reports, "first_mismatch": failed}, text)
    return 0 if failed is None else 1


def cmd_gen(args) -> int:
    p = _read_program(args.file)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = {dim: args.dims for dim in p.dims}
    written = []
    for k, d in enumerate(x for x in p.decls if x.kind is cinp.Kind.INPUT):
        t = gen_uniform(d, sizes, args.density, seed=(args.seed, k))
        f = out / f"{d.name}.tns"
        f.write_text(write_tensor(t))
        written.append({"tensor": d.name, "file": str(f), "nnz": t.nnz})
    _emit(args, {"files": written}, "\n".join(f"{w['file']}  nnz={w['nnz']}" for w in written))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", nargs="?", const="-", default=None, metavar="PATH",
                        help="emit JSON (to stdout, or to PATH)")
    common.add_argument("--seed", type=int, default=0)
    ctx = argparse.ArgumentParser(add_help=False)
    ctx.add_argument("--sunk", choices=("default", "none"), default="default")
    ctx.add_argument("--assume", choices=("nonempty", "none"), default="nonempty")
    inst = argparse.ArgumentParser(add_help=False)
    inst.add_argument("--dims", type=int, default=8)
    inst.add_argument("--density", type=float, default=0.3)

    ap = argparse.ArgumentParser(prog="sparse-asympt", parents=[common],
                                 description="Asymptotic cost analysis and scheduling of sparse tensor programs.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("check", parents=[common], help="parse and validate a program")
    s.add_argument("file")
    s.set_defaults(fn=cmd_check)

    s = sub.add_parser("cost", parents=[common, ctx], help="derive per-site task sets")
    s.add_argument("file")
    s.set_defaults(fn=cmd_cost)

    s = sub.add_parser("compare", parents=[common, ctx], help="compare two programs asymptotically")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("schedule", parents=[common], help="run the scheduling pipeline")
    s.add_argument("kernel", help=f"kernel name ({', '.join(SOURCES)}) or program file")
    s.add_argument("--taco", action="store_true")
    s.add_argument("--max-candidates", type=int, default=None)
    s.add_argument("--empirical", action="store_true")
    s.add_argument("--dims", type=int, default=32)
    s.add_argument("--density", type=float, default=0.01)
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--sunk", choices=("default", "none"), default="default")
    s.add_argument("--count", action="store_true", help="also count min-depth schedules without building them")
    s.add_argument("--show", type=int, default=3, help="programs to print")
    s.set_defaults(fn=cmd_schedule)

    s = sub.add_parser("validate", parents=[common, inst], help="check derived costs against the interpreter")
    s.add_argument("file")
    s.add_argument("--trials", type=int, default=5)
    s.add_argument("--inputs", metavar="DIR", help="read NAME.tns tensors instead of generating them")
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("gen", parents=[common, inst], help="write random input tensors for a program")
    s.add_argument("file")
    s.add_argument("--out", default=".", metavar="DIR")
    s.set_defaults(fn=cmd_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not 0 <= getattr(args, "density", 0) <= 1:
        print("sparse-asympt: error: --density must be in [0, 1]", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except DomainError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
