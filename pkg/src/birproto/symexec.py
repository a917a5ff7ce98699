"""Crypto-aware symbolic execution of BIR and execution-tree construction.

A symbolic state keeps the program counter concrete.  Special calls mirror
the concrete step relation but introduce fresh symbols instead of values:

========  ===============  ==========================================
call      symbol kind      meaning
========  ===============  ==========================================
RNG       ``x_r``          defined as the tape words it consumes
library   ``v_lib``        defined as ``App(op, loaded args)``
event     ``d_ev``         defined as the loaded argument
receive   ``e_in``         primitive; the attacker chooses it
loop      ``t_loop``       primitive iteration counter
========  ===============  ==========================================

Symbol names are ``<kind>_<pc>_<counter>`` where the counter lives in the
state, so the same path always produces the same names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .bits import Bits, WidthError, chunk_for
from .bir import (
    ADDR_WIDTH, CTR, HEAP, HEAP_A, HEAP_OP, LEN_WIDTH, LR, MEM, MEM_A, MEM_OP, REGION_BASE,
    REGION_SIZE, RM, Assert, Assign, BinOp, BirError, BirExp, BirProgram, CJmp, ChannelSpec,
    Const, Halt, IfThenElse, Jmp, LabelVal, Load, Store, UnOp, Var, region_of,
)
from .events import TAU, Crypto, Ev, Fail, Fresh, In, Loop, Out, Tau
from .ops import OpRegistry, UnknownOp, default_registry
from .solver import EnumerationSolver, Solver, SolverUnknown, complete_model
from .symexp import (
    FALSE, TRUE, Interpretation, SConst, SVar, SymExp, const, interpret, mk_and, mk_app, mk_bin,
    mk_concat, mk_ite, mk_load, mk_not, mk_slice, mk_un, pretty, Unbound,
)


class SymExecError(Exception):
    """Symbolic execution cannot continue on this path."""


class TapeExhausted(SymExecError):
    pass


# -- symbolic environment values ----------------------------------------

class SymMemory:
    """Concrete addresses mapped to symbolic cells."""

    __slots__ = ("cells",)

    def __init__(self, cells: Optional[Dict[int, SymExp]] = None):
        self.cells: Dict[int, SymExp] = dict(cells or {})

    def set_many(self, items) -> "SymMemory":
        c = dict(self.cells)
        c.update(items)
        return SymMemory(c)

    def __eq__(self, other) -> bool:
        return isinstance(other, SymMemory) and self.cells == other.cells

    def __repr__(self) -> str:
        return f"SymMemory({len(self.cells)} cells)"


@dataclass(frozen=True)
class SymTape:
    words: Tuple[SVar, ...]
    w: int


def tape_symbols(count: int, w: int, prefix: str = "rm") -> SymTape:
    return SymTape(tuple(SVar(f"{prefix}_{j}", w) for j in range(count)), w)


@dataclass
class SymConfig:
    n: int = 4
    w: Optional[int] = None  # tape word width; defaults to n
    k: int = 2  # RNG calls the tape can serve
    registry: OpRegistry = field(default_factory=default_registry)
    solver: Optional[Solver] = field(default_factory=EnumerationSolver)
    max_depth: int = 200
    max_targets: int = 16
    unroll_bound: int = 8
    counter_width: int = 8
    suffix: str = ""

    @property
    def word_width(self) -> int:
        return self.w or self.n

    @property
    def l(self) -> int:
        if self.n % self.word_width:
            raise WidthError("n must be a multiple of the tape word width")
        return self.n // self.word_width


@dataclass
class SymState:
    phi: SymExp
    env: Dict[str, Any]
    pc: Any
    status: str = "run"
    counter: int = 0
    defs: Dict[str, SymExp] = field(default_factory=dict)
    # branch conditions taken by the step that produced this state
    decisions: Tuple[Tuple[SymExp, bool], ...] = ()

    def interp(self, registry: Optional[OpRegistry] = None, values=None) -> Interpretation:
        return Interpretation(values or {}, self.defs, registry)

    def fresh(self, kind: str, suffix: str = "") -> Tuple[str, "SymState"]:
        name = f"{kind}_{self.pc}_{self.counter}{suffix}"
        return name, replace(self, counter=self.counter + 1)


def initial_sym_state(p: BirProgram, entry=None, args: Sequence[SymExp] = (),
                      cfg: Optional[SymConfig] = None, tape: Optional[SymTape] = None) -> SymState:
    """Root state; without explicit ``args`` the configured parameters become symbols."""
    cfg = cfg or SymConfig()
    entry = p.start if entry is None else entry
    if not args and entry in p.partition.params:
        args = tuple(SVar(name, w) for name, w in p.partition.params[entry])
    if tape is None:
        tape = tape_symbols(cfg.k * cfg.l, cfg.word_width)
    env: Dict[str, Any] = {
        RM: tape,
        CTR: const(0, 64),
        HEAP: const(REGION_BASE[MEM], ADDR_WIDTH),
        HEAP_OP: const(REGION_BASE[MEM_OP], ADDR_WIDTH),
        HEAP_A: const(REGION_BASE[MEM_A], ADDR_WIDTH),
        MEM: SymMemory(), MEM_OP: SymMemory(), MEM_A: SymMemory(),
    }
    for i, a in enumerate(args):
        env, addr = sym_mstore(env, HEAP, MEM, a)
        env[f"R{i}"] = addr
    return SymState(TRUE, env, entry)


# -- expressions ---------------------------------------------------------

def _lift(v: Any) -> Any:
    if isinstance(v, (Bits, LabelVal)):
        return SConst(v)
    return v


def sym_eval(env: Dict[str, Any], e: BirExp) -> Any:
    """Structural evaluation with folding; agrees with ``eval_exp`` on ground input."""
    if isinstance(e, Const):
        return SConst(e.value)
    if isinstance(e, Var):
        try:
            return _lift(env[e.name])
        except KeyError:
            raise SymExecError(f"unbound variable {e.name}") from None
    if isinstance(e, BinOp):
        return mk_bin(e.op, _exp(sym_eval(env, e.left)), _exp(sym_eval(env, e.right)))
    if isinstance(e, UnOp):
        return mk_un(e.op, _exp(sym_eval(env, e.arg)), e.width)
    if isinstance(e, IfThenElse):
        c = _exp(sym_eval(env, e.cond))
        if c.width not in (None, 1):
            raise WidthError("ifthenelse selector must be 1 bit")
        if isinstance(c, SConst):
            return sym_eval(env, e.then if c.value.value else e.else_)
        return mk_ite(c, _exp(sym_eval(env, e.then)), _exp(sym_eval(env, e.else_)))
    if isinstance(e, Load):
        mem = sym_eval(env, e.mem)
        if not isinstance(mem, SymMemory):
            raise SymExecError("load from a non-memory value")
        try:
            return mk_load(mem.cells, _exp(sym_eval(env, e.addr)), e.width)
        except KeyError as exc:
            raise SymExecError(str(exc)) from None
    if isinstance(e, Store):
        mem = sym_eval(env, e.mem)
        if not isinstance(mem, SymMemory):
            raise SymExecError("store into a non-memory value")
        addr = _exp(sym_eval(env, e.addr))
        if not isinstance(addr, SConst):
            raise SymExecError("store at a symbolic address is not supported")
        val = _exp(sym_eval(env, e.value))
        if val.width != e.width:
            raise WidthError(f"store of {val.width} bits with width {e.width}")
        return mem.set_many([(addr.value.value, val)])
    raise SymExecError(f"unknown expression {e!r}")


def _exp(v: Any) -> SymExp:
    if not isinstance(v, SymExp):
        raise SymExecError(f"expected an expression, got {v!r}")
    return v


def _concrete_int(v: Any, what: str) -> int:
    if isinstance(v, SConst) and isinstance(v.value, Bits):
        return v.value.value
    raise SymExecError(f"{what} must be concrete, got {pretty(v) if isinstance(v, SymExp) else v!r}")


def sym_mstore(env: Dict[str, Any], heap_var: str, region: str, b: SymExp) -> Tuple[Dict[str, Any], SConst]:
    if b.width is None:
        raise SymExecError("cannot marshal a value of unknown width")
    chunk = chunk_for(b.width)
    count = b.width // chunk
    start = _concrete_int(env[heap_var], "heap cursor")
    end = start + 1 + count
    if end > REGION_BASE[region] + REGION_SIZE:
        raise SymExecError(f"region {region} exhausted")
    items = [(start, const(count, LEN_WIDTH))]
    items += [(start + 1 + i, mk_slice(b, i * chunk, chunk)) for i in range(count)]
    env = dict(env)
    env[region] = env[region].set_many(items)
    env[heap_var] = const(end, ADDR_WIDTH)
    return env, const(start, ADDR_WIDTH)


def sym_mload(env: Dict[str, Any], addr: Any) -> SymExp:
    a = _concrete_int(addr, "marshalled address")
    region = region_of(a)
    if region is None:
        raise SymExecError(f"mload outside every region: {a:#x}")
    mem: SymMemory = env[region]
    head = mem.cells.get(a)
    if head is None:
        raise SymExecError(f"mload of unwritten address {a:#x}")
    count = _concrete_int(head, "length word")
    if count > REGION_SIZE:
        raise SymExecError("implausible length word")
    parts = []
    for i in range(1, count + 1):
        c = mem.cells.get(a + i)
        if c is None:
            raise SymExecError(f"mload past written data at {a + i:#x}")
        parts.append(c)
    return mk_concat(parts)


def label_of_sym(v: Any):
    if isinstance(v, SConst):
        if isinstance(v.value, LabelVal):
            return v.value.name
        return v.value.value
    raise SymExecError("jump target is not concrete")


# -- indirect jumps ------------------------------------------------------

@dataclass
class Targets:
    labels: List[Any]
    complete: bool


def resolve_indirect(s: SymState, target: SymExp, solver: Optional[Solver] = None,
                     cap: int = 16, registry: Optional[OpRegistry] = None) -> Targets:
    """Every label the target can take under the path condition.

    Repeatedly asks for a model and blocks the value found.  When the cap is
    hit the partial set is returned with ``complete=False``.
    """
    if isinstance(target, SConst):
        return Targets([label_of_sym(target)], True)
    solver = solver or EnumerationSolver()
    found: List[Any] = []
    block = s.phi
    while True:
        r = solver.check(block, s.interp(registry))
        if r.status == "unknown":
            raise SolverUnknown(r.reason)
        if not r.sat:
            return Targets(found, True)
        if len(found) >= cap:
            return Targets(found, False)
        v = interpret(s.interp(registry, complete_model(r.model, [target], s.defs)), target)
        t = v if isinstance(v, LabelVal) else v
        lab = t.name if isinstance(t, LabelVal) else t.value
        found.append(lab)
        block = mk_and(block, mk_bin("NEQ", target, SConst(t)))


# -- stepping ------------------------------------------------------------

def _return(s: SymState):
    ret = s.env.get(LR)
    if ret is None:
        raise SymExecError("call without a recorded return site (LR unset)")
    return label_of_sym(_lift(ret))


def _feasible(phi: SymExp, s: SymState, cfg: SymConfig) -> bool:
    if phi == FALSE:
        return False
    if cfg.solver is None or phi == TRUE:
        return True
    r = cfg.solver.check(phi, s.interp(cfg.registry))
    # unknown keeps the state; the caller may flag it later
    return r.status != "unsat"


def sym_channel(p: BirProgram, label, env) -> Tuple[str, Tuple[SymExp, ...]]:
    spec = p.partition.channels.get(label, ChannelSpec())
    return spec.chan, tuple(_exp(sym_eval(env, e)) for e in spec.ids)


def sym_step(p: BirProgram, s: SymState, cfg: Optional[SymConfig] = None,
             guide: Optional[Interpretation] = None) -> List[Tuple[SymState, Any]]:
    """Symbolic successors of ``s`` with the event of each step.

    With ``guide`` only the successor consistent with that interpretation
    is produced (used for lockstep runs); otherwise every feasible one.
    """
    cfg = cfg or SymConfig()
    if s.status != "run":
        raise SymExecError(f"state is {s.status}")
    kind, detail = p.partition.classify(s.pc)
    if kind != "normal" and not p.partition.is_entry(kind, s.pc):
        raise SymExecError(f"call into {s.pc} bypasses its entry point")
    sfx = cfg.suffix
    env = s.env
    if kind == "rng":
        tape: SymTape = env[RM]
        if cfg.n % tape.w:
            raise WidthError("n is not a multiple of the tape word width")
        l = cfg.n // tape.w
        ctr = _concrete_int(env[CTR], "ctr")
        if ctr + l > len(tape.words):
            raise TapeExhausted(f"random tape exhausted after {ctr} words")
        defn = mk_concat(tape.words[ctr:ctr + l])
        name, s1 = s.fresh("x_r", sfx)
        x = SVar(name, cfg.n)
        env1 = dict(env)
        env1[CTR] = const(ctr + l, 64)
        env2, a = sym_mstore(env1, HEAP, MEM, x)
        env2["R0"] = a
        defs = dict(s.defs)
        defs[name] = defn
        st = replace(s1, env=env2, pc=_return(s), defs=defs, decisions=())
        return [(st, Fresh(x, ctr // l + 1, name, defn))]
    if kind == "op":
        try:
            arity = cfg.registry.arity(detail)
        except UnknownOp:
            raise SymExecError(f"unknown op {detail}") from None
        args = [sym_mload(env, env[f"R{i}"]) for i in range(1, arity + 1)]
        app = mk_app(detail, args, cfg.registry)
        if app.width is None:
            raise SymExecError(f"result width of {detail} unknown")
        name, s1 = s.fresh("v_lib", sfx)
        v = SVar(name, app.width)
        env2, a = sym_mstore(env, HEAP_OP, MEM_OP, v)
        env2["R0"] = a
        defs = dict(s.defs)
        defs[name] = app
        st = replace(s1, env=env2, pc=_return(s), defs=defs, decisions=())
        return [(st, Crypto(v, detail, app))]
    if kind == "event":
        m = p.partition.event_arity.get(detail, 0)
        loaded = [sym_mload(env, env[f"R{i}"]) for i in range(1, m + 1)]
        defs = dict(s.defs)
        names, s1 = [], s
        for d in loaded:
            name, s1 = s1.fresh("d_ev", sfx)
            defs[name] = d
            names.append(SVar(name, d.width))
        st = replace(s1, pc=_return(s), defs=defs, decisions=())
        return [(st, Ev(detail, tuple(names), tuple(loaded)))]
    if kind == "send":
        payload = sym_mload(env, env["R0"])
        chan, ids = sym_channel(p, s.pc, env)
        return [(replace(s, pc=_return(s), decisions=()), Out(payload, chan, ids))]
    if kind == "recv":
        width = p.partition.recv_width.get(s.pc)
        if width is None:
            raise SymExecError(f"receive {s.pc} has no declared message width")
        chan, ids = sym_channel(p, s.pc, env)
        name, s1 = s.fresh("e_in", sfx)
        e = SVar(name, width)
        env2, a = sym_mstore(env, HEAP_A, MEM_A, e)
        env2["R0"] = a
        return [(replace(s1, env=env2, pc=_return(s), decisions=()), In(e, chan, ids))]
    if s.pc in p.partition.loops:
        from .loops import loop_step
        return loop_step(p, s, cfg, guide)
    return exec_block_sym(p, s, cfg, guide)


def exec_block_sym(p: BirProgram, s: SymState, cfg: SymConfig,
                   guide: Optional[Interpretation] = None) -> List[Tuple[SymState, Any]]:
    block = p.block(s.pc)
    out: List[Tuple[SymState, Any]] = []
    # worklist of (env, phi, decisions, next statement index)
    work = [(s.env, s.phi, (), 0)]
    while work:
        env, phi, dec, i = work.pop(0)
        done = False
        while i < len(block.stmts) and not done:
            st = block.stmts[i]
            i += 1
            if isinstance(st, Assign):
                env = dict(env)
                env[st.var] = sym_eval(env, st.exp)
            elif isinstance(st, Assert):
                c = _exp(sym_eval(env, st.exp))
                if isinstance(c, SConst):
                    if not c.value.value:
                        out.append((replace(s, env=env, phi=phi, status="fail", decisions=dec), Fail("assert")))
                        done = True
                    continue
                ok, bad = mk_and(phi, c), mk_and(phi, mk_not(c))
                if _choose(bad, s, cfg, guide):
                    out.append((replace(s, env=env, phi=bad, status="fail", decisions=dec + ((c, False),)),
                                Fail("assert")))
                if _choose(ok, s, cfg, guide):
                    phi, dec = ok, dec + ((c, True),)
                else:
                    done = True
            elif isinstance(st, Halt):
                out.append((replace(s, env=env, phi=phi, status="halt", decisions=dec), TAU))
                done = True
            elif isinstance(st, Jmp):
                out.extend(_jump(s, env, phi, dec, sym_eval(env, st.target), cfg, guide))
                done = True
            elif isinstance(st, CJmp):
                c = _exp(sym_eval(env, st.cond))
                if c.width not in (None, 1):
                    raise WidthError("cjmp condition must be 1 bit")
                if isinstance(c, SConst):
                    tgt = st.then if c.value.value else st.else_
                    out.extend(_jump(s, env, phi, dec, sym_eval(env, tgt), cfg, guide))
                else:
                    for val, tgt in ((True, st.then), (False, st.else_)):
                        phi2 = mk_and(phi, c if val else mk_not(c))
                        if _choose(phi2, s, cfg, guide):
                            out.extend(_jump(s, env, phi2, dec + ((c, val),), sym_eval(env, tgt), cfg, guide))
                done = True
        if not done:
            nxt = p.next_label(s.pc)
            if nxt is None:
                raise SymExecError(f"block {s.pc} falls off the end of the program")
            out.append((replace(s, env=env, phi=phi, pc=nxt, decisions=dec), TAU))
    return out


def _choose(phi: SymExp, s: SymState, cfg: SymConfig, guide: Optional[Interpretation]) -> bool:
    if guide is not None:
        g = guide.copy()
        for k, v in s.defs.items():
            if k not in g.defs:
                g.defs[k] = v
        try:
            return bool(interpret(g, phi).value)
        except Unbound:
            return _feasible(phi, s, cfg)
    return _feasible(phi, s, cfg)


def _jump(s: SymState, env, phi, dec, target, cfg: SymConfig, guide) -> List[Tuple[SymState, Any]]:
    target = _lift(target)
    if isinstance(target, SConst):
        return [(replace(s, env=env, phi=phi, pc=label_of_sym(target), decisions=dec), TAU)]
    probe = replace(s, env=env, phi=phi)
    if guide is not None:
        g = guide.copy()
        g.defs.update({k: v for k, v in s.defs.items() if k not in g.defs})
        v = interpret(g, target)
        labels = [v.name if isinstance(v, LabelVal) else v.value]
        complete = True
    else:
        res = resolve_indirect(probe, target, cfg.solver, cfg.max_targets, cfg.registry)
        labels, complete = res.labels, res.complete
    if not complete:
        raise SymExecError(f"indirect jump has more than {cfg.max_targets} targets")
    out = []
    prefix = dec
    for j, lab in enumerate(labels):
        lit = SConst(LabelVal(lab)) if isinstance(target.width, type(None)) else const(lab, target.width)
        eq = mk_bin("EQ", target, lit)
        last = j == len(labels) - 1 and guide is None
        phi_j = mk_and(phi, eq)
        # the final target's negated sibling is infeasible and pruned
        out.append((replace(s, env=env, phi=phi_j, pc=lab, decisions=prefix + ((eq, True),)), TAU))
        if not last:
            phi = mk_and(phi, mk_not(eq))
            prefix = prefix + ((eq, False),)
    return out


# -- execution trees -----------------------------------------------------

class ExecTree:
    pass


@dataclass
class Leaf(ExecTree):
    """``halt`` and ``fail`` are proper ends; anything else marks truncation."""

    kind: str = "halt"
    reason: str = ""

    @property
    def truncated(self) -> bool:
        return self.kind not in ("halt", "fail", "back", "exit")


@dataclass
class Node(ExecTree):
    pc: Any
    ev: Any
    child: ExecTree
    # loop nodes: the translated body is built from this subtree
    body: Optional[ExecTree] = None
    info: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Branch(ExecTree):
    gamma: SymExp
    then: ExecTree
    else_: ExecTree
    pc: Any = None


@dataclass
class TreeBounds:
    max_depth: int = 200


def build_tree(p: BirProgram, s0: Optional[SymState] = None, cfg: Optional[SymConfig] = None,
               stop_at: Optional[Dict[Any, str]] = None) -> ExecTree:
    """Execution tree from ``s0``.

    ``stop_at`` maps labels to leaf kinds; reaching one ends the path there
    (used for loop bodies, which stop at the back edge and the exit).
    """
    cfg = cfg or SymConfig()
    if s0 is None:
        s0 = initial_sym_state(p, cfg=cfg)
    return _build(p, s0, cfg, 0, stop_at or {})


def build_body_tree(p: BirProgram, s: SymState, cfg: SymConfig, stop_at: Dict[Any, str]) -> ExecTree:
    """Tree of one loop iteration: the entry block runs as a plain block."""
    try:
        succs = exec_block_sym(p, s, cfg)
    except (SymExecError, BirError, WidthError) as exc:
        return Leaf("stuck", str(exc))
    return _assemble(p, s, [(list(st.decisions), st, ev) for st, ev in succs], cfg, 0, stop_at)


def _build(p: BirProgram, s: SymState, cfg: SymConfig, depth: int, stop_at) -> ExecTree:
    if depth >= cfg.max_depth:
        return Leaf("trunc", "depth bound")
    try:
        succs = sym_step(p, s, cfg)
    except TapeExhausted as exc:
        return Leaf("tape", str(exc))
    except SolverUnknown as exc:
        return Leaf("unknown", str(exc))
    except (SymExecError, BirError, WidthError) as exc:
        return Leaf("stuck", str(exc))
    if not succs:
        return Leaf("stuck", "no feasible successor")
    return _assemble(p, s, [(list(st.decisions), st, ev) for st, ev in succs], cfg, depth, stop_at)


def _assemble(p, s, items, cfg, depth, stop_at) -> ExecTree:
    if len(items) == 1 and not items[0][0]:
        _, st, ev = items[0]
        return _node(p, s, st, ev, cfg, depth, stop_at)
    first = next((d[0][0] for d, _, _ in items if d), None)
    if first is None:
        raise SymExecError("ambiguous successors without branch conditions")
    yes = [(d[1:], st, ev) for d, st, ev in items if d and d[0] == (first, True)]
    no = [(d[1:], st, ev) for d, st, ev in items if d and d[0] == (first, False)]
    if yes and no:
        return Branch(first, _assemble(p, s, yes, cfg, depth, stop_at),
                      _assemble(p, s, no, cfg, depth, stop_at), s.pc)
    return _assemble(p, s, yes or no, cfg, depth, stop_at)


def _node(p, s, st: SymState, ev, cfg, depth, stop_at) -> ExecTree:
    body, info = None, {}
    if isinstance(ev, Loop) and ev.summary is not None:
        body, info = ev.summary.body, ev.summary.info()
    if st.status == "halt":
        return Node(s.pc, ev, Leaf("halt"), body, info)
    if st.status == "fail":
        return Node(s.pc, ev, Leaf("fail"), body, info)
    if st.pc in stop_at:
        return Node(s.pc, ev, Leaf(stop_at[st.pc]), body, info)
    return Node(s.pc, ev, _build(p, st, cfg, depth + 1, stop_at), body, info)


def select(tree: ExecTree, pc) -> Optional[ExecTree]:
    """First subtree, in depth-first order, rooted at a node for ``pc``."""
    stack = [tree]
    while stack:
        t = stack.pop()
        if isinstance(t, Node):
            if t.pc == pc:
                return t
            stack.append(t.child)
        elif isinstance(t, Branch):
            if t.pc == pc:
                return t
            stack.append(t.else_)
            stack.append(t.then)
    return None


def leaves(tree: ExecTree) -> List[Leaf]:
    out, stack = [], [tree]
    while stack:
        t = stack.pop()
        if isinstance(t, Leaf):
            out.append(t)
        elif isinstance(t, Node):
            stack.append(t.child)
        elif isinstance(t, Branch):
            stack.extend((t.else_, t.then))
    return out


def count_nodes(tree: ExecTree) -> Dict[str, int]:
    c = {"node": 0, "branch": 0, "leaf": 0}
    stack = [tree]
    while stack:
        t = stack.pop()
        if isinstance(t, Leaf):
            c["leaf"] += 1
        elif isinstance(t, Node):
            c["node"] += 1
            stack.append(t.child)
        else:
            c["branch"] += 1
            stack.extend((t.then, t.else_))
    return c


def tree_paths(tree: ExecTree) -> List[List[Any]]:
    """Root-to-leaf paths as lists of Node/Branch-decision/Leaf items."""
    out = []

    def rec(t, acc):
        if isinstance(t, Leaf):
            out.append(acc + [t])
        elif isinstance(t, Node):
            rec(t.child, acc + [t])
        else:
            rec(t.then, acc + [(t.gamma, True)])
            rec(t.else_, acc + [(t.gamma, False)])
    rec(tree, [])
    return out


# -- export --------------------------------------------------------------

def format_sym_event(ev) -> str:
    if isinstance(ev, Tau):
        return "tau"
    if isinstance(ev, Fresh):
        return f"fr {ev.name}"
    if isinstance(ev, Crypto):
        return f"crypto {pretty(ev.value)} = {pretty(ev.defn)}"
    if isinstance(ev, Ev):
        args = ev.defs if ev.defs is not None else ev.args
        return f"event {ev.name}({', '.join(pretty(a) for a in args)})"
    if isinstance(ev, Out):
        return f"out {ev.chan}{_ids(ev.ids)} {pretty(ev.payload)}"
    if isinstance(ev, In):
        return f"in {ev.chan}{_ids(ev.ids)} {pretty(ev.payload)}"
    if isinstance(ev, Loop):
        return f"loop {pretty(ev.counter)}"
    if isinstance(ev, Fail):
        return f"fail {ev.reason}"
    return str(ev)


def _ids(ids) -> str:
    return f"[{', '.join(pretty(i) for i in ids)}]" if ids else ""


def tree_to_json(tree: ExecTree) -> Dict[str, Any]:
    nodes, edges = [], []

    def add(t) -> int:
        i = len(nodes)
        if isinstance(t, Leaf):
            nodes.append({"id": i, "type": "leaf", "kind": t.kind, "reason": t.reason})
        elif isinstance(t, Node):
            nodes.append({"id": i, "type": "node", "pc": t.pc, "event": format_sym_event(t.ev)})
            c = add(t.child)
            edges.append({"from": i, "to": c})
            if t.body is not None:
                b = add(t.body)
                edges.append({"from": i, "to": b, "label": "body"})
        else:
            nodes.append({"id": i, "type": "branch", "pc": t.pc, "cond": pretty(t.gamma)})
            a = add(t.then)
            edges.append({"from": i, "to": a, "label": "T"})
            b = add(t.else_)
            edges.append({"from": i, "to": b, "label": "F"})
        return i
    add(tree)
    return {"nodes": nodes, "edges": edges}


def tree_to_dot(tree: ExecTree) -> str:
    data = tree_to_json(tree)
    out = ["digraph tree {"]
    for n in data["nodes"]:
        if n["type"] == "leaf":
            lab, shape = n["kind"], "box"
        elif n["type"] == "node":
            lab, shape = f"{n['pc']}: {n['event']}", "ellipse"
        else:
            lab, shape = f"{n['pc']}: {n['cond']}", "diamond"
        out.append(f"  n{n['id']} [label={json.dumps(lab)}, shape={shape}];")
    for e in data["edges"]:
        attr = f" [label={json.dumps(e['label'])}]" if "label" in e else ""
        out.append(f"  n{e['from']} -> n{e['to']}{attr};")
    out.append("}")
    return "\n".join(out) + "\n"
