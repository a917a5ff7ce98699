"""Command-line front end.

Every subcommand prints its result on stdout.  Failures print one JSON
object on stderr and exit with a code that names the failure class.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence

from .bir import BirConfig, BirProgram, RandomTape, initial_state, run_concrete
from .birparse import ParseError, format_program, load_program, parse_program
from .bits import Bits
from .corpus import load_corpus
from .events import Tau, format_record
from .extract import ExtractConfig, extract_program
from .iml import IMLContext, IMLParseError, IMLStuck, format_process, parse_process
from .mixed import (
    MixedStuck, MixedSystem, differential_run_bir_sbir, differential_run_sbir_iml,
    initial_mixed, iml_model_context, mixed_successors, mixed_traces,
)
from .ops import load_registry
from .security import (
    check_attack_preservation, insecurity_bir, insecurity_iml, load_property,
)
from .solver import EnumerationSolver, SolverUnknown
from .symexec import (
    Leaf, Node, SymConfig, build_tree, format_sym_event, initial_sym_state, tree_to_dot, tree_to_json,
)
from .symexp import pretty

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_STUCK = 3
EXIT_BUDGET = 4
EXIT_VIOLATION = 5
EXIT_DIVERGENCE = 6


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _classify(exc: Exception) -> CliError:
    if isinstance(exc, CliError):
        return exc
    if isinstance(exc, (ParseError, IMLParseError, json.JSONDecodeError)):
        return CliError(EXIT_PARSE, "parse", str(exc))
    if isinstance(exc, SolverUnknown):
        return CliError(EXIT_BUDGET, "budget", str(exc))
    if isinstance(exc, (MixedStuck, IMLStuck)):
        return CliError(EXIT_STUCK, "stuck", str(exc))
    if isinstance(exc, OSError):
        return CliError(EXIT_ERROR, "io", str(exc))
    return CliError(EXIT_ERROR, type(exc).__name__, str(exc))


# -- shared inputs --------------------------------------------------------

def _read(path: str) -> str:
    with open(path) as fh:
        return fh.read()


def _program(path: str, config: Optional[str] = None) -> BirProgram:
    return load_program(path, config)


def _n_of(args, programs: Sequence[BirProgram] = ()) -> int:
    if args.n is not None:
        return args.n
    for p in programs:
        if "n" in p.meta:
            return int(p.meta["n"])
    return 4


def _tape(args, n: int, k: int) -> RandomTape:
    """The tape from ``--tape`` (hex or 0b-binary text) or drawn from ``--seed``."""
    if args.tape:
        text = "".join(_read(args.tape).split())
        bits = Bits.from_str(text[2:]) if text.startswith("0b") else Bits.from_hex(text)
        if bits.length % n:
            raise CliError(EXIT_PARSE, "parse", f"tape of {bits.length} bits is not a multiple of n={n}")
        return RandomTape.from_bits(bits, n)
    rnd = random.Random(args.seed)
    return RandomTape(tuple(Bits(rnd.getrandbits(n), n) for _ in range(k)), n)


def _system(args, paths: Sequence[str]) -> MixedSystem:
    progs = [_program(p) for p in paths]
    programs = {p.start: p for p in progs}
    reg = load_registry()
    return MixedSystem(programs, IMLContext(reg), n=_n_of(args, progs), k=args.k,
                       width_budget=args.width_budget)


def _emit(args, text_out: str, data: Any) -> None:
    if getattr(args, "format", "text") == "json":
        print(json.dumps(data, indent=1, default=str))
    else:
        sys.stdout.write(text_out if text_out.endswith("\n") or not text_out else text_out + "\n")


def _frac(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


# -- subcommands ----------------------------------------------------------

def cmd_parse(args) -> int:
    text = _read(args.file)
    if args.file.endswith(".iml"):
        print(format_process(parse_process(text)))
        return EXIT_OK
    cfg = json.loads(_read(args.config)) if args.config else None
    p = parse_program(text, cfg, args.file.rsplit("/", 1)[-1].rsplit(".", 1)[0])
    p.validate()
    sys.stdout.write(format_program(p))
    return EXIT_OK


def cmd_run(args) -> int:
    p = _program(args.file, args.config)
    if not p.blocks:
        _emit(args, "", {"status": "empty", "events": []})
        return EXIT_OK
    n = _n_of(args, [p])
    tape = _tape(args, n, args.k)
    run_args = [Bits.from_hex(a) for a in args.arg]
    msgs: Dict[str, List[Bits]] = {}
    for m in args.msg:
        chan, _, val = m.partition("=")
        msgs.setdefault(chan, []).append(Bits.from_hex(val))
    entry = args.entry or p.start
    s0 = initial_state(p, entry, run_args, tape)
    tr = run_concrete(p, s0, tape, msgs, max_steps=args.depth, cfg=BirConfig(load_registry(), n))
    lines = [format_record(i, Fraction(1), e) for i, e in enumerate(tr.events) if not isinstance(e, Tau)]
    tail = f"status: {tr.status}" + (f" ({tr.error})" if tr.error else "")
    _emit(args, "\n".join(lines + [tail]),
          {"status": tr.status, "error": tr.error, "events": lines})
    if tr.status in ("halt", "fail"):
        return EXIT_OK
    if tr.status == "bound":
        return EXIT_BUDGET
    return EXIT_STUCK


def _tree_text(t, indent: int = 0) -> List[str]:
    pad = "  " * indent
    if isinstance(t, Leaf):
        return [f"{pad}[{t.kind}]" + (f" {t.reason}" if t.reason else "")]
    if isinstance(t, Node):
        out = [f"{pad}{t.pc}: {format_sym_event(t.ev)}"]
        if t.body is not None:
            out.append(f"{pad}  body:")
            out.extend(_tree_text(t.body, indent + 2))
        return out + _tree_text(t.child, indent)
    out = [f"{pad}{t.pc}: if {pretty(t.gamma)}"]
    out.append(f"{pad}then:")
    out.extend(_tree_text(t.then, indent + 1))
    out.append(f"{pad}else:")
    out.extend(_tree_text(t.else_, indent + 1))
    return out


def _sym_cfg(args, n: int) -> SymConfig:
    return SymConfig(n=n, k=args.k, registry=load_registry(),
                     solver=EnumerationSolver(args.width_budget), max_depth=args.depth)


def cmd_symexec(args) -> int:
    p = _program(args.file, args.config)
    cfg = _sym_cfg(args, _n_of(args, [p]))
    tree = build_tree(p, initial_sym_state(p, args.entry, cfg=cfg), cfg)
    if args.format == "dot":
        sys.stdout.write(tree_to_dot(tree))
    elif args.format == "json":
        print(json.dumps(tree_to_json(tree), indent=1))
    else:
        print("\n".join(_tree_text(tree)))
    return EXIT_OK


def cmd_extract(args) -> int:
    p = _program(args.file, args.config)
    cfg = _sym_cfg(args, _n_of(args, [p]))
    ecfg = ExtractConfig(repl_bound=args.repl_bound)
    proc = extract_program(p, cfg, ecfg, args.entry)
    print(format_process(proc))
    for d in ecfg.diagnostics:
        print(json.dumps({"diagnostic": d}), file=sys.stderr)
    return EXIT_OK


def cmd_mixed(args) -> int:
    system = _system(args, args.prog)
    proc = parse_process(_read(args.iml))
    if args.flavor == "bir":
        return _mixed_bir(args, system, proc)
    s0 = initial_mixed(system, proc, "sbir")
    traces, partial = mixed_traces(system, s0, args.depth)
    paths = []
    for t in traces:
        evs = [format_sym_event(e) for e in t.events if not isinstance(e, Tau)]
        paths.append({"status": t.status, "reason": t.reason, "prob": _frac(t.prob), "events": evs})
    text = []
    for i, x in enumerate(paths):
        text.append(f"path {i} [{x['status']}{': ' + x['reason'] if x['reason'] else ''}] p={x['prob']}")
        text.extend(f"  {e}" for e in x["events"])
    _emit(args, "\n".join(text), {"paths": paths, "partial": partial})
    return EXIT_BUDGET if partial else EXIT_OK


def _mixed_bir(args, system: MixedSystem, proc) -> int:
    """One run; scheduling and draws of IML ``new`` follow ``--seed``."""
    rnd = random.Random(args.seed)
    s = initial_mixed(system, proc, "bir", _tape(args, system.n, args.k))
    records, status = [], "done"
    for _ in range(args.depth):
        try:
            succ = mixed_successors(system, s)
        except (MixedStuck, IMLStuck) as exc:
            status = f"stuck: {exc}"
            break
        if not succ:
            break
        x = succ[rnd.randrange(len(succ))] if len(succ) > 1 else succ[0]
        if x.event is not None and not isinstance(x.event, Tau):
            records.append(format_record(len(records), x.prob, x.event))
        s = x.state
    else:
        status = "depth"
    _emit(args, "\n".join(records + [f"status: {status}"]), {"status": status, "events": records})
    return EXIT_BUDGET if status == "depth" else EXIT_OK


def cmd_difftest(args) -> int:
    items = load_corpus(args.corpus)
    rnd = random.Random(args.seed)
    reports = []
    failed = 0
    for name, prog, proc in items:
        n = _n_of(args, [prog])
        system = MixedSystem({prog.start: prog}, IMLContext(load_registry()), n=n, k=args.k,
                             width_budget=args.width_budget)
        for j in range(args.tapes):
            tape = RandomTape(tuple(Bits(rnd.getrandbits(n), n) for _ in range(args.k)), n)
            r = differential_run_bir_sbir(system, proc, tape, seed=rnd.randrange(1 << 30))
            reports.append({"program": name, "check": "lockstep", "tape": j, "ok": r.ok,
                            "witness": r.witness})
            failed += not r.ok
        r = differential_run_sbir_iml(system, proc, depth=args.depth)
        reports.append({"program": name, "check": "inclusion", "paths": r.paths, "ok": r.ok,
                        "witness": r.witness})
        failed += not r.ok
    lines = [f"{x['program']} {x['check']}: {'ok' if x['ok'] else 'FAIL ' + str(x['witness'])}"
             for x in reports]
    lines.append(f"{len(reports) - failed}/{len(reports)} ok")
    _emit(args, "\n".join(lines), {"reports": reports, "failed": failed})
    return EXIT_OK if failed == 0 else EXIT_DIVERGENCE


def cmd_insec(args) -> int:
    proc = parse_process(_read(args.iml))
    psi = load_property(args.property)
    if args.layer == "iml":
        if args.prog:
            system = _system(args, args.prog)
            ctx = iml_model_context(system, ExtractConfig(repl_bound=args.repl_bound))
            n = system.n
        else:
            ctx, n = IMLContext(load_registry()), _n_of(args)
        res = insecurity_iml(proc, n, args.depth, psi, ctx)
    else:
        system = _system(args, args.prog)
        res = insecurity_bir(proc, system, system.n, args.k, args.depth, psi)
    data = {"layer": args.layer, "property": psi.name, "insecurity": _frac(res.value),
            "partial": res.partial,
            "witnesses": [{"prob": _frac(p), "trace": [[e.kind, e.name] for e in t]}
                          for t, p in res.violating_traces]}
    _emit(args, f"insec = {res}", data)
    if res.value > 0:
        return EXIT_VIOLATION
    return EXIT_BUDGET if res.partial else EXIT_OK


def cmd_check(args) -> int:
    proc = parse_process(_read(args.iml))
    psi = load_property(args.property)
    system = _system(args, args.prog)
    ctx = iml_model_context(system, ExtractConfig(repl_bound=args.repl_bound))
    rep = check_attack_preservation(proc, system, system.n, args.k, args.depth, psi, ctx)
    data = {"insec_program": _frac(rep.insec_bir.value), "insec_model": _frac(rep.insec_iml.value),
            "holds": rep.holds, "partial": rep.insec_bir.partial or rep.insec_iml.partial}
    _emit(args, rep.to_text(), data)
    return EXIT_OK if rep.holds else EXIT_DIVERGENCE


# -- argument parsing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, default=None, help="bits per RNG call")
    common.add_argument("--k", type=int, default=2, help="RNG calls the tape serves")
    common.add_argument("--depth", type=int, default=200)
    common.add_argument("--width-budget", type=int, default=20)
    common.add_argument("--repl-bound", type=int, default=8)
    common.add_argument("--format", choices=("text", "json", "dot"), default="text")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tape", help="file holding the random tape in hex (or 0b binary)")

    ap = argparse.ArgumentParser(prog="birproto", description="BIR to IML model extraction toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("parse", parents=[common], help="validate and print canonical form")
    p.add_argument("file")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("run", parents=[common], help="concrete run")
    p.add_argument("file")
    p.add_argument("--config")
    p.add_argument("--entry")
    p.add_argument("--arg", action="append", default=[], help="hex argument, repeatable")
    p.add_argument("--msg", action="append", default=[], help="CHAN=HEX message to deliver")
    p.set_defaults(fn=cmd_run)

    for name, fn, hlp in (("symexec", cmd_symexec, "execution tree"),
                          ("extract", cmd_extract, "IML model of a program")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        p.add_argument("file")
        p.add_argument("--config")
        p.add_argument("--entry")
        p.set_defaults(fn=fn)

    p = sub.add_parser("mixed", parents=[common], help="mixed execution")
    p.add_argument("iml")
    p.add_argument("--prog", action="append", default=[])
    p.add_argument("--flavor", choices=("bir", "sbir"), default="bir")
    p.set_defaults(fn=cmd_mixed)

    p = sub.add_parser("difftest", parents=[common], help="both differential checkers on a corpus")
    p.add_argument("corpus")
    p.add_argument("--tapes", type=int, default=4)
    p.set_defaults(fn=cmd_difftest, depth=60)

    p = sub.add_parser("insec", parents=[common], help="insecurity of one layer")
    p.add_argument("iml")
    p.add_argument("--prog", action="append", default=[])
    p.add_argument("--property", required=True)
    p.add_argument("--layer", choices=("iml", "bir"), default="iml")
    p.set_defaults(fn=cmd_insec)

    p = sub.add_parser("check", parents=[common], help="program insecurity bounded by model insecurity")
    p.add_argument("iml")
    p.add_argument("--prog", action="append", default=[])
    p.add_argument("--property", required=True)
    p.set_defaults(fn=cmd_check)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # every failure becomes a diagnostic and an exit code
        err = _classify(exc)
        print(json.dumps({"error": err.kind, "type": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
