"""Model extraction: execution trees to IML processes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, FrozenSet, List, Optional

from .bir import BirProgram, LabelVal
from .bits import Bits
from .events import Crypto, Ev, Fail, Fresh, In, Loop, Out, Tau
from .iml import (
    NIL, Event, IApp, IBits, IExp, If, Input, IVar, Let, New, Output, Process, Repl, RunTarget,
)
from .symexec import Branch, ExecTree, Leaf, Node, SymConfig, build_tree, initial_sym_state
from .symexp import (
    SApp, SBin, SConcat, SConst, SForall, SIndexed, SIte, SLoad, SSlice, SUn, SVar, SymExp,
    symbols,
)

BOTTOM = "⊥"


class ExtractionError(Exception):
    """The tree or expression has no translation."""


class UnmappedOperator(ExtractionError):
    """An operator outside the translation table; the result would be bottom."""

    def __init__(self, op: str):
        super().__init__(f"operator {op} has no IML counterpart ({BOTTOM})")
        self.op = op
        self.marker = BOTTOM


@dataclass
class ExtractConfig:
    repl_bound: int = 8
    # notes about constructs that were translated but deserve review
    diagnostics: List[str] = field(default_factory=list)


LABEL_WIDTH = 128


def label_bits(label: Any) -> Bits:
    """Bitstring standing for a code label inside a model.

    Labels share one width so that comparisons between them are defined;
    names longer than 16 bytes get a wider word.
    """
    if isinstance(label, int):
        return Bits(label, LABEL_WIDTH)
    data = str(label).encode()
    return Bits(int.from_bytes(data, "big"), max(LABEL_WIDTH, 8 * len(data)))


def _word(v: int, w: int = 32) -> IBits:
    return IBits(Bits(v, w))


def exp_to_iml(e: SymExp) -> IExp:
    if isinstance(e, SConst):
        if isinstance(e.value, LabelVal):
            return IBits(label_bits(e.value.name))
        return IBits(e.value)
    if isinstance(e, SVar):
        return IVar(e.name)
    if isinstance(e, SBin):
        return IApp(e.op, (exp_to_iml(e.left), exp_to_iml(e.right)))
    if isinstance(e, SUn):
        if e.op == "NOT":
            return IApp("NOT", (exp_to_iml(e.arg),))
        if e.op == "CAST":
            return IApp("cast", (exp_to_iml(e.arg), _word(e.width, 8)))
        raise UnmappedOperator(e.op)
    if isinstance(e, SIte):
        return IApp("ite", (exp_to_iml(e.cond), exp_to_iml(e.then), exp_to_iml(e.else_)))
    if isinstance(e, SApp):
        return IApp(e.fn, tuple(exp_to_iml(a) for a in e.args))
    if isinstance(e, SSlice):
        return IApp("slice", (exp_to_iml(e.arg), _word(e.lo), _word(e.width)))
    if isinstance(e, SConcat):
        parts = [exp_to_iml(p) for p in e.parts]
        out = parts[-1]
        for p in reversed(parts[:-1]):
            out = IApp("concat", (p, out))
        return out
    if isinstance(e, SLoad):
        # a read from a known set of cells: compare the address against each
        addr = exp_to_iml(e.addr)
        out: IExp = IApp("bot", ())
        for a, v in reversed(e.cells):
            hit = IApp("EQ", (addr, IBits(Bits(a, e.addr.width or 64))))
            out = IApp("ite", (hit, exp_to_iml(v), out))
        return out
    if isinstance(e, (SIndexed, SForall)):
        raise ExtractionError(f"{type(e).__name__} has no IML counterpart")
    raise ExtractionError(f"unknown expression {e!r}")


def tree_to_iml(t: ExecTree, cfg: Optional[ExtractConfig] = None) -> Process:
    """Translate a tree without truncated leaves; the result is deterministic."""
    cfg = cfg or ExtractConfig()
    return _tr(t, cfg, frozenset(), False)


def _head_loops(t: ExecTree) -> List[Node]:
    """Loop nodes reached from ``t`` through branches only."""
    out, stack = [], [t]
    while stack:
        x = stack.pop()
        if isinstance(x, Branch):
            stack.extend((x.else_, x.then))
        elif isinstance(x, Node) and isinstance(x.ev, Loop):
            out.append(x)
    return out


def _tr(t: ExecTree, cfg: ExtractConfig, bound: FrozenSet[str], under_branch: bool) -> Process:
    if isinstance(t, Leaf):
        if t.truncated:
            raise ExtractionError(f"truncated leaf ({t.kind}: {t.reason})")
        return NIL
    if isinstance(t, Branch):
        # several loop exits are told apart by conditions on the counter,
        # so the loop itself has to be bound before the test
        names = set(symbols(t.gamma))
        for node in _head_loops(t):
            c = node.ev.counter.name
            if c in names and c not in bound:
                return _loop(node, cfg, _tr(t, cfg, bound | {c}, under_branch))
        return If(exp_to_iml(t.gamma), _tr(t.then, cfg, bound, True), _tr(t.else_, cfg, bound, True))
    if not isinstance(t, Node):
        raise ExtractionError(f"unknown tree node {t!r}")
    ev = t.ev
    if isinstance(ev, Loop):
        c = ev.counter.name
        if c in bound:
            return _tr(t.child, cfg, bound, under_branch)
        if under_branch:
            cfg.diagnostics.append(f"loop at {t.pc} sits under a branch")
        return _loop(t, cfg, _tr(t.child, cfg, bound | {c}, under_branch))
    rest = _tr(t.child, cfg, bound, under_branch)
    if isinstance(ev, Tau):
        return rest
    if isinstance(ev, Fresh):
        return New(ev.value.name, ev.value.width, rest)
    if isinstance(ev, Crypto):
        return Let(ev.value.name, exp_to_iml(ev.defn), rest)
    if isinstance(ev, Ev):
        args = ev.defs if ev.defs is not None else ev.args
        return Event(ev.name, tuple(exp_to_iml(a) for a in args), rest)
    if isinstance(ev, In):
        return Input(ev.chan, tuple(exp_to_iml(i) for i in ev.ids), ev.payload.name, rest)
    if isinstance(ev, Out):
        return Output(ev.chan, tuple(exp_to_iml(i) for i in ev.ids), exp_to_iml(ev.payload), rest)
    if isinstance(ev, Fail):
        return NIL
    raise ExtractionError(f"no translation for event {ev!r}")


def loop_proc(node: Node, cfg: Optional[ExtractConfig] = None) -> Process:
    """The IML process of one iteration of a summarized loop."""
    cfg = cfg or ExtractConfig()
    if node.body is None:
        raise ExtractionError(f"loop at {node.pc} has no recorded body")
    return _tr(node.body, cfg, frozenset(), False)


def _loop(node: Node, cfg: ExtractConfig, cont: Process) -> Process:
    """``m`` guarded iterations of the body, then the counter is fixed to the count."""
    summary = node.ev.summary
    count = summary.count if summary is not None else node.info.get("count")
    if count is None:
        raise ExtractionError(f"loop at {node.pc} has no closed-form iteration count")
    m = cfg.repl_bound
    if m >= 256:
        raise ExtractionError("replication bound must stay below 256")
    t = node.ev.counter
    tw = t.width or 8
    idx = f"{t.name}_i"
    count_e = exp_to_iml(count)
    t_cmp: IExp = IVar(t.name)
    if count.width is not None and count.width != tw:
        t_cmp = IApp("cast", (t_cmp, _word(count.width, 8)))
    body = loop_proc(node, cfg)
    step = Let(t.name, IApp("cast", (IApp("MINUS", (IVar(idx), _word(1, 8))), _word(tw, 8))),
               If(IApp("LT", (t_cmp, count_e)), body, NIL))
    return Repl(idx, m, step, Let(t.name, _fit(count_e, count.width, tw), cont))


def _fit(e: IExp, w: Optional[int], target: int) -> IExp:
    if w is None or w == target:
        return e
    return IApp("cast", (e, _word(target, 8)))


def extract_program(p: BirProgram, sym_cfg: Optional[SymConfig] = None,
                    cfg: Optional[ExtractConfig] = None, entry=None) -> Process:
    """Build the tree of ``p`` from ``entry`` and translate it."""
    sym_cfg = sym_cfg or SymConfig()
    s0 = initial_sym_state(p, entry, cfg=sym_cfg)
    return tree_to_iml(build_tree(p, s0, sym_cfg), cfg)


def run_target(p: BirProgram, sym_cfg: Optional[SymConfig] = None,
               cfg: Optional[ExtractConfig] = None, entry=None) -> RunTarget:
    """What ``run entry(args)`` stands for in pure IML: the extracted model."""
    entry = p.start if entry is None else entry
    params = tuple(name for name, _ in p.partition.params.get(entry, ()))
    return RunTarget(params, extract_program(p, sym_cfg, cfg, entry))
