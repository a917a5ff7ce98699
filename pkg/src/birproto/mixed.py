"""Mixed execution of IML processes with BIR or symbolic BIR participants.

In the ``bir`` flavor program participants run concretely; in ``sbir``
they run symbolically and the state carries an interpretation ``h``
that grounds every symbol that has crossed into the concrete IML world
(received messages and run arguments).  Both flavors share one random
tape whose position is global across participants.

The differential checkers relate the layers step by step:

* ``differential_run_bir_sbir`` runs the concrete flavor and mirrors
  every step symbolically, guided by ``h``.  ``h`` grows as follows:

  ==============  ===================================================
  step            extension of ``h``
  ==============  ===================================================
  start           tape symbols bound to the concrete tape words
  run             parameter symbols bound to the argument values
  rng / op        nothing; the fresh symbol is defined, not bound
  event           nothing; event symbols are defined by their loads
  IML to program  the received symbol bound to the concrete message
  loop            the iteration counter bound to the concrete count
  ==============  ===================================================

* ``differential_run_sbir_iml`` enumerates symbolic mixed traces and
  replays each against the IML system whose programs are replaced by
  their extracted models.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

from .bir import (
    CTR, RM, BirConfig, BirError, BirProgram, BirState, RandomTape, channel_key, fresh_env,
    initial_state, mload, receive, bir_step, MEM, MEM_A, MEM_OP, HEAP, HEAP_OP, HEAP_A,
)
from .bits import Bits, WidthError, word
from .events import TAU, Comm, Crypto, Ev, Fail, Fresh, In, Loop, Out, Tau, project
from .extract import ExtractConfig, ExtractionError, run_target, tree_to_iml
from .iml import (
    IMLContext, IMLError, IMLState, IMLStuck, Input, Nil, Output, Par, Process, Run, freeze,
    iml_successors, output_of, reduce, run_args, step_local, ieval,
)
from .solver import EnumerationSolver, SolverUnknown, complete_model, solve
from .symexec import (
    SymConfig, SymExecError, SymState, initial_sym_state, select, sym_channel, sym_step,
    tape_symbols,
)
from .symexp import (
    TRUE, Interpretation, Rebind, SConst, SVar, SymExp, Unbound, Undefined, interpret, mk_and,
    primitive_symbols,
)

FLAVORS = ("bir", "sbir")


class MixedError(Exception):
    """A side condition of a mixed rule failed (not unique, width, ...)."""


class MixedStuck(Exception):
    """No mixed rule applies."""


@dataclass(frozen=True)
class IMLPart:
    env: Tuple[Tuple[str, Any], ...]
    proc: Process


@dataclass(frozen=True, eq=False)
class ProgPart:
    entry: Any
    state: Any  # BirState or SymState

    @property
    def pc(self):
        return self.state.pc


@dataclass
class MixedSystem:
    """Programs reachable by ``run`` and the parameters shared by both flavors."""

    programs: Dict[Any, BirProgram]
    ctx: IMLContext = field(default_factory=IMLContext)
    n: int = 4
    k: int = 2
    w: Optional[int] = None
    width_budget: int = 20
    # models tried when a symbolic message must become concrete
    model_cap: int = 16

    def __post_init__(self):
        self.sym_cfg = SymConfig(n=self.n, w=self.w, k=self.k, registry=self.ctx.registry,
                                 solver=EnumerationSolver(self.width_budget))
        self.bir_cfg = BirConfig(self.ctx.registry, self.n)

    @property
    def word_width(self) -> int:
        return self.w or self.n

    def program(self, entry) -> BirProgram:
        if entry not in self.programs:
            raise MixedError(f"run of unknown entry {entry}")
        return self.programs[entry]


@dataclass(frozen=True)
class MixedState:
    flavor: str
    active: Any
    pool: Tuple[Any, ...] = ()
    tape: Any = None
    ctr: int = 0
    fresh_count: int = 0
    h: Optional[Interpretation] = field(default=None, compare=False)
    # path conditions of finished symbolic participants
    phi: SymExp = TRUE
    started: FrozenSet[Any] = frozenset()

    def parts(self) -> List[Any]:
        return ([self.active] if self.active is not None else []) + list(self.pool)

    def total_phi(self) -> SymExp:
        out = self.phi
        for x in self.parts():
            if isinstance(x, ProgPart):
                out = mk_and(out, x.state.phi)
        return out


@dataclass
class MixedSucc:
    state: MixedState
    event: Any
    prob: Fraction = Fraction(1)
    kind: str = "det"  # det | prob | sched | branch


def initial_mixed(system: MixedSystem, process: Process, flavor: str,
                  tape: Optional[RandomTape] = None, bind_tape: bool = False) -> MixedState:
    """Start state: ``process`` active, no participants yet.

    In the symbolic flavor ``bind_tape`` binds the tape symbols to the
    words of ``tape`` (the lockstep starting relation).
    """
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}")
    active = IMLPart(freeze({}), process)
    if flavor == "bir":
        if tape is None:
            tape = RandomTape((), system.word_width)
        return MixedState("bir", active, (), tape)
    cfg = system.sym_cfg
    stape = tape_symbols(cfg.k * cfg.l, cfg.word_width)
    h = Interpretation(registry=system.ctx.registry)
    if bind_tape:
        if tape is None:
            raise ValueError("bind_tape needs a concrete tape")
        for sym, b in zip(stape.words, tape.words):
            h.bind(sym.name, b)
    return MixedState("sbir", active, (), stape, h=h)


# -- helpers --------------------------------------------------------------

def _h_with_defs(h: Interpretation, *states) -> Interpretation:
    g = h.copy()
    for st in states:
        for k, v in st.defs.items():
            if k not in g.defs:
                g.defs[k] = v
    return g


def _all_defs(s: MixedState) -> Interpretation:
    return _h_with_defs(s.h, *[x.state for x in s.parts() if isinstance(x, ProgPart)])


def _bir_sync(st: BirState, s: MixedState) -> BirState:
    return BirState(st.env.set(**{RM: s.tape, CTR: word(s.ctr, 64)}), st.pc, st.status)


def _sym_sync(st: SymState, s: MixedState) -> SymState:
    env = dict(st.env)
    env[RM] = s.tape
    env[CTR] = SConst(word(s.ctr, 64))
    return replace(st, env=env)


def _ctr_of(env) -> int:
    v = env[CTR]
    return v.value.value if isinstance(v, SConst) else v.value


def _blocked(system: MixedSystem, part: ProgPart) -> bool:
    kind, _ = system.program(part.entry).partition.classify(part.pc)
    return kind == "recv"


def _iml_receivers(system: MixedSystem, pool, chan, ids) -> List[int]:
    out = []
    for i, x in enumerate(pool):
        if isinstance(x, IMLPart) and isinstance(x.proc, Input) and x.proc.chan == chan:
            env = dict(x.env)
            if tuple(ieval(system.ctx, env, e) for e in x.proc.ids) == tuple(ids):
                out.append(i)
    return out


def _prog_receivers(system: MixedSystem, s: MixedState, chan, ids) -> List[int]:
    out = []
    for i, x in enumerate(s.pool):
        if isinstance(x, ProgPart) and _blocked(system, x):
            p = system.program(x.entry)
            if s.flavor == "bir":
                key = channel_key(p, x.pc, x.state.env)
            else:
                c, sids = sym_channel(p, x.pc, x.state.env)
                g = _h_with_defs(s.h, x.state)
                try:
                    key = (c, tuple(interpret(g, e) for e in sids))
                except (Unbound, Undefined):
                    raise MixedError(f"channel ids of {x.entry} are not grounded") from None
            if key == (chan, tuple(ids)):
                out.append(i)
    return out


def _feasible(system: MixedSystem, s: MixedState, phi: SymExp, states) -> bool:
    if phi == TRUE:
        return True
    g = _h_with_defs(s.h, *states)
    r = system.sym_cfg.solver.check(phi, g)
    return r.status != "unsat"


# -- the step relation ----------------------------------------------------

def mixed_successors(system: MixedSystem, s: MixedState, guide: bool = False) -> List[MixedSucc]:
    """Every successor of ``s``; empty when the system has terminated.

    ``guide`` (symbolic flavor only) resolves program branches through
    ``h`` instead of forking.
    """
    if s.active is None:
        out = []
        for i, x in enumerate(s.pool):
            ready = (isinstance(x, IMLPart) and not isinstance(x.proc, Input)) or \
                (isinstance(x, ProgPart) and not _blocked(system, x))
            if ready:
                st = replace(s, active=x, pool=s.pool[:i] + s.pool[i + 1:])
                out.append(MixedSucc(st, TAU, Fraction(1), "sched"))
        return out
    if isinstance(s.active, IMLPart):
        return _iml_active(system, s)
    if s.flavor == "bir":
        return _bir_active(system, s)
    return _sbir_active(system, s, guide)


def mixed_step(system: MixedSystem, s: MixedState, choice: int = 0, guide: bool = False):
    succ = mixed_successors(system, s, guide)
    if not succ:
        raise MixedStuck("no step possible")
    x = succ[choice]
    return x.state, x.event, x.prob


def _iml_active(system: MixedSystem, s: MixedState) -> List[MixedSucc]:
    ctx = system.ctx
    env = dict(s.active.env)
    p = s.active.proc
    local = step_local(ctx, env, p, s.fresh_count)
    if local is not None:
        return [MixedSucc(replace(s, active=IMLPart(freeze(x.env), x.proc), fresh_count=x.fresh_count),
                          x.event, x.prob, x.kind) for x in local]
    if isinstance(p, (Nil, Par, Input)):
        members = tuple(IMLPart(e, q) for e, q in reduce(ctx, [(env, p)]))
        return [MixedSucc(replace(s, active=None, pool=s.pool + members), TAU)]
    if isinstance(p, Run):
        return [_run(system, s, p, env)]
    if isinstance(p, Output):
        b, ids = output_of(ctx, env, p)
        iml_r = _iml_receivers(system, s.pool, p.chan, ids)
        prog_r = _prog_receivers(system, s, p.chan, ids)
        if len(iml_r) + len(prog_r) == 0:
            raise MixedStuck(f"no receiver on {p.chan}")
        if len(iml_r) + len(prog_r) > 1:
            raise MixedError(f"several receivers on {p.chan}; the receiver must be unique")
        rest_members = tuple(IMLPart(e, q) for e, q in reduce(ctx, [(env, p.cont)]))
        if iml_r:
            j = iml_r[0]
            q = s.pool[j]
            rest = s.pool[:j] + s.pool[j + 1:] + rest_members
            act = IMLPart(freeze({**dict(q.env), q.proc.var: b}), q.proc.cont)
            return [MixedSucc(replace(s, active=act, pool=rest), Comm(p.chan, ids, b))]
        j = prog_r[0]
        q = s.pool[j]
        rest = s.pool[:j] + s.pool[j + 1:] + rest_members
        prog = system.program(q.entry)
        if s.flavor == "bir":
            st2, ev = receive(prog, q.state, b, p.chan, ids)
            return [MixedSucc(replace(s, active=ProgPart(q.entry, st2), pool=rest), ev)]
        width = prog.partition.recv_width.get(q.pc)
        if width != b.length:
            raise MixedStuck(f"message of {b.length} bits for a {width}-bit receive")
        [(st2, ev)] = sym_step(prog, q.state, system.sym_cfg)
        h2 = s.h.copy()
        name = ev.payload.name
        if name in h2:
            raise MixedError(f"received symbol {name} is not fresh")
        h2.bind(name, b)
        return [MixedSucc(replace(s, active=ProgPart(q.entry, st2), pool=rest, h=h2), ev)]
    raise IMLError(f"unknown process {p!r}")


def _run(system: MixedSystem, s: MixedState, p: Run, env) -> MixedSucc:
    if p.pc in s.started:
        raise MixedError(f"entry {p.pc} is run twice")
    prog = system.program(p.pc)
    args = run_args(system.ctx, env, p)
    started = s.started | {p.pc}
    if s.flavor == "bir":
        st = initial_state(prog, p.pc, args, env=fresh_env(s.tape))
        return MixedSucc(replace(s, active=ProgPart(p.pc, st), started=started), TAU)
    params = prog.partition.params.get(p.pc, ())
    if len(params) != len(args):
        raise MixedError(f"run {p.pc} with {len(args)} arguments, {len(params)} parameters declared")
    h2 = s.h.copy()
    syms = []
    for (name, w), b in zip(params, args):
        if b.length != w:
            raise MixedStuck(f"argument {name} has {b.length} bits, {w} declared")
        if name in h2:
            raise MixedError(f"parameter symbol {name} is not fresh")
        h2.bind(name, b)
        syms.append(SVar(name, w))
    st = initial_sym_state(prog, p.pc, tuple(syms), system.sym_cfg, tape=s.tape)
    return MixedSucc(replace(s, active=ProgPart(p.pc, st), started=started, h=h2), TAU)


def _finish(s: MixedState, part: ProgPart, ctr: int, ev, h=None) -> MixedSucc:
    """Successor after the active program moved to ``part``."""
    h = s.h if h is None else h
    if part.state.status in ("halt", "fail"):
        phi = mk_and(s.phi, part.state.phi) if s.flavor == "sbir" else s.phi
        return MixedSucc(replace(s, active=None, ctr=ctr, phi=phi, h=h), ev)
    return MixedSucc(replace(s, active=part, ctr=ctr, h=h), ev)


def _bir_active(system: MixedSystem, s: MixedState) -> List[MixedSucc]:
    part: ProgPart = s.active
    prog = system.program(part.entry)
    st = _bir_sync(part.state, s)
    kind, _ = prog.partition.classify(st.pc)
    if kind == "recv":
        return [MixedSucc(replace(s, active=None, pool=s.pool + (part,)), TAU)]
    if kind == "send":
        msg = mload(st.env, st.env["R0"])
        chan, ids = channel_key(prog, st.pc, st.env)
        msg = msg.truncate(system.ctx.maxlen_of(chan))
        st2, ev, _ = bir_step(prog, st, None, system.bir_cfg)
        recv = _iml_receivers(system, s.pool, chan, ids)
        if not recv:
            raise MixedStuck(f"no receiver on {chan}")
        if len(recv) > 1:
            raise MixedError(f"several receivers on {chan}; the receiver must be unique")
        j = recv[0]
        q = s.pool[j]
        rest = s.pool[:j] + s.pool[j + 1:] + (ProgPart(part.entry, st2),)
        act = IMLPart(freeze({**dict(q.env), q.proc.var: msg}), q.proc.cont)
        return [MixedSucc(replace(s, active=act, pool=rest), Out(msg, chan, ids))]
    st2, ev, _ = bir_step(prog, st, None, system.bir_cfg)
    return [_finish(s, ProgPart(part.entry, st2), st2.env[CTR].value, ev)]


def _sbir_active(system: MixedSystem, s: MixedState, guide: bool) -> List[MixedSucc]:
    part: ProgPart = s.active
    prog = system.program(part.entry)
    st = _sym_sync(part.state, s)
    kind, _ = prog.partition.classify(st.pc)
    cfg = system.sym_cfg
    if kind == "recv":
        return [MixedSucc(replace(s, active=None, pool=s.pool + (part,)), TAU)]
    g = _all_defs(s) if guide else None
    if guide or s.h is None:
        succs = sym_step(prog, st, cfg, g)
    else:
        # symbols already bound by h are constants for the branch checks
        known = {k: SConst(v) for k, v in s.h.values.items() if k not in st.defs}
        succs = [(replace(x, defs={k: v for k, v in x.defs.items() if k not in known}), ev)
                 for x, ev in sym_step(prog, replace(st, defs={**st.defs, **known}), cfg)]
    others = [x.state for x in s.parts() if isinstance(x, ProgPart) and x is not part]
    out: List[MixedSucc] = []
    for st2, ev in succs:
        phi_all = mk_and(s.phi, st2.phi)
        for o in others:
            phi_all = mk_and(phi_all, o.phi)
        if not guide and len(succs) > 1 and not _feasible(system, s, phi_all, [st2] + others):
            continue
        h2 = _h_with_defs(s.h, st2)
        new_part = ProgPart(part.entry, st2)
        ctr = _ctr_of(st2.env)
        if kind == "send":
            out.extend(_sbtoi(system, s, new_part, ev, h2, phi_all, [st2] + others, ctr))
            continue
        x = _finish(s, new_part, ctr, ev, h2)
        out.append(x)
    if len(out) > 1:
        for x in out:
            x.kind = "branch"
    return out


def _sbtoi(system, s, part, ev: Out, h: Interpretation, phi_all, states, ctr) -> List[MixedSucc]:
    """Symbolic output to IML: the payload is grounded by ``h``, or by models."""
    exps = (ev.payload,) + tuple(ev.ids)
    try:
        hs = [(h, tuple(interpret(h, e) for e in exps))]
    except Unbound:
        free: Dict[str, Optional[int]] = {}
        for e in exps:
            free.update(primitive_symbols(e, h.defs, h.values.keys()))
        if any(w is None for w in free.values()):
            raise MixedError("output depends on a symbol of unknown width")
        hs = []
        models = system.sym_cfg.solver.models(phi_all, list(free), free, h)
        for model in models:
            h2 = h.copy()
            for k, v in model.items():
                h2.bind(k, v)
            try:
                hs.append((h2, tuple(interpret(h2, e) for e in exps)))
            except Undefined:
                continue
            if len(hs) >= system.model_cap:
                break
    except Undefined as exc:
        raise MixedStuck(f"output of an undefined value: {exc}") from None
    out = []
    for h2, vals in hs:
        b = vals[0].truncate(system.ctx.maxlen_of(ev.chan))
        ids = vals[1:]
        recv = _iml_receivers(system, s.pool, ev.chan, ids)
        if not recv:
            raise MixedStuck(f"no receiver on {ev.chan}")
        if len(recv) > 1:
            raise MixedError(f"several receivers on {ev.chan}; the receiver must be unique")
        j = recv[0]
        q = s.pool[j]
        rest = s.pool[:j] + s.pool[j + 1:] + (part,)
        act = IMLPart(freeze({**dict(q.env), q.proc.var: b}), q.proc.cont)
        out.append(MixedSucc(replace(s, active=act, pool=rest, h=h2, ctr=ctr), ev))
    return out


# -- traces ---------------------------------------------------------------

STUCK = (MixedStuck, MixedError, IMLStuck, IMLError, BirError, WidthError, SymExecError,
         SolverUnknown, Rebind)


@dataclass
class MixedTrace:
    events: List[Any]
    probs: List[Fraction]
    status: str  # done | stuck | depth
    state: Optional[MixedState] = None
    reason: str = ""

    @property
    def prob(self) -> Fraction:
        out = Fraction(1)
        for p in self.probs:
            out *= p
        return out


def mixed_traces(system: MixedSystem, s0: MixedState, depth: int = 60,
                 max_traces: int = 10_000) -> Tuple[List[MixedTrace], bool]:
    """Maximal traces up to ``depth``; the flag says the list is partial."""
    out: List[MixedTrace] = []
    partial = False
    stack = [(s0, [], [])]
    while stack:
        s, evs, probs = stack.pop()
        if len(out) >= max_traces:
            return out, True
        if len(evs) >= depth:
            out.append(MixedTrace(evs, probs, "depth", s))
            partial = True
            continue
        try:
            succ = mixed_successors(system, s)
        except STUCK as exc:
            out.append(MixedTrace(evs, probs, "stuck", s, str(exc)))
            continue
        if not succ:
            out.append(MixedTrace(evs, probs, "done", s))
            continue
        for x in reversed(succ):
            stack.append((x.state, evs + [x.event], probs + [x.prob]))
    return out, partial


# -- relations between layers --------------------------------------------

def ground(ev, h: Interpretation):
    """``ev`` with every symbolic payload replaced by its value under ``h``."""
    def g(v):
        return interpret(h, v) if isinstance(v, SymExp) else v

    if isinstance(ev, Fresh):
        return Fresh(g(ev.value), ev.index)
    if isinstance(ev, Crypto):
        return Crypto(g(ev.value), ev.op)
    if isinstance(ev, Ev):
        return Ev(ev.name, tuple(g(a) for a in ev.args))
    if isinstance(ev, Out):
        return Out(g(ev.payload), ev.chan, tuple(g(i) for i in ev.ids))
    if isinstance(ev, In):
        return In(g(ev.payload), ev.chan, tuple(g(i) for i in ev.ids))
    if isinstance(ev, Comm):
        return Comm(ev.chan, tuple(g(i) for i in ev.ids), g(ev.payload))
    if isinstance(ev, Loop):
        return Loop(None, ev.count)
    return ev


def _event_exps(ev) -> List[SymExp]:
    vals = []
    for attr in ("value", "payload"):
        vals.append(getattr(ev, attr, None))
    vals.extend(getattr(ev, "args", None) or ())
    vals.extend(getattr(ev, "ids", None) or ())
    return [v for v in vals if isinstance(v, SymExp)]


def events_match(concrete, symbolic, h: Interpretation) -> bool:
    """``concrete`` equals ``symbolic`` under ``h`` (ignoring fresh indexes)."""
    try:
        gs = ground(symbolic, h)
    except (Unbound, Undefined):
        return False
    if isinstance(concrete, Fresh) and isinstance(gs, Fresh):
        return concrete.value == gs.value
    if isinstance(concrete, Crypto) and isinstance(gs, Crypto):
        return concrete.value == gs.value and concrete.op == gs.op
    if isinstance(concrete, Loop) and isinstance(gs, Loop):
        return True
    if isinstance(concrete, (Tau, Fail)):
        return type(concrete) is type(gs)
    return concrete == gs


_RESERVED = {RM, CTR, MEM, MEM_OP, MEM_A, HEAP, HEAP_OP, HEAP_A}


def _env_related(h: Interpretation, cenv, senv) -> bool:
    for name, v in cenv.vars.items():
        if name in (RM, "__unroll__"):
            continue
        if name not in senv:
            return False
        sv = senv[name]
        if name in (MEM, MEM_OP, MEM_A):
            if set(v.cells) != set(sv.cells):
                return False
            for a, b in v.cells.items():
                try:
                    if interpret(h, sv.cells[a]) != b:
                        return False
                except (Unbound, Undefined):
                    return False
            continue
        if name == CTR:
            continue
        try:
            val = interpret(h, sv) if isinstance(sv, SymExp) else sv
        except (Unbound, Undefined):
            return False
        if val != v and not (hasattr(val, "name") and hasattr(v, "name") and val.name == v.name):
            return False
    return True


def check_sim_state(h: Interpretation, cb: MixedState, cs: MixedState) -> bool:
    """Concrete and symbolic mixed states related through ``h``."""
    pb, ps = cb.parts(), cs.parts()
    if len(pb) != len(ps) or cb.ctr != cs.ctr:
        return False
    g = h.copy()
    for x in ps:
        if isinstance(x, ProgPart):
            for k, v in x.state.defs.items():
                g.defs.setdefault(k, v)
    for a, b in zip(pb, ps):
        if type(a) is not type(b):
            return False
        if isinstance(a, IMLPart):
            if a != b:
                return False
            continue
        if a.entry != b.entry or a.pc != b.pc or a.state.status != b.state.status:
            return False
        if not _env_related(g, a.state.env, b.state.env):
            return False
    try:
        return bool(interpret(g, cs.total_phi()).value)
    except (Unbound, Undefined):
        return False


def check_sim_iml(h: Interpretation, cs: MixedState, ci: IMLState, tree, subtree=None,
                  cfg: Optional[ExtractConfig] = None) -> bool:
    """The IML state runs the translation of the symbolic participant's subtree.

    The active symbolic participant's pc selects the subtree unless
    ``subtree`` is given; IML variables named like symbols must hold the
    symbols' values under ``h``.
    """
    part = cs.active
    if not isinstance(part, ProgPart) or ci.active is None:
        return False
    sub = subtree if subtree is not None else select(tree, part.pc)
    if sub is None:
        raise KeyError(f"pc {part.pc} absent from the tree")
    try:
        expected = tree_to_iml(sub, cfg)
    except ExtractionError:
        return False
    env, proc = ci.active
    if proc != expected:
        return False
    g = _h_with_defs(h, part.state)
    for name, v in env:
        try:
            if interpret(g, SVar(name, None)) != v:
                return False
        except Unbound:
            continue
        except Undefined:
            return False
    return True


# -- differential runs ----------------------------------------------------

@dataclass
class SimReport:
    ok: bool
    witness: Optional[Dict[str, Any]] = None
    h_final: Optional[Interpretation] = None
    steps: int = 0
    paths: int = 0
    note: str = ""

    def __post_init__(self):
        if self.ok:
            self.witness = None

    def to_text(self) -> str:
        lines = [f"ok: {str(self.ok).lower()}", f"steps: {self.steps}", f"paths: {self.paths}"]
        if self.note:
            lines.append(f"note: {self.note}")
        if self.witness:
            for k, v in self.witness.items():
                lines.append(f"{k}: {v}")
        if self.h_final is not None:
            for k in sorted(self.h_final.values):
                lines.append(f"h {k} = {self.h_final.values[k]!r}")
        return "\n".join(lines)


def _fail(i, cev, sev, msg, h, steps=0) -> SimReport:
    return SimReport(False, {"index": i, "concrete": repr(cev), "symbolic": repr(sev), "reason": msg},
                     h, steps)


def differential_run_bir_sbir(system: MixedSystem, iml: Process, tape: RandomTape,
                              depth: int = 200, seed: int = 0) -> SimReport:
    """Lockstep: a concrete mixed run mirrored by the guided symbolic one."""
    rnd = random.Random(seed)
    cb = initial_mixed(system, iml, "bir", tape)
    cs = initial_mixed(system, iml, "sbir", tape, bind_tape=True)
    h = cs.h
    if not check_sim_state(h, cb, cs):
        return _fail(0, None, None, "initial states unrelated", h)
    for i in range(depth):
        try:
            sb = mixed_successors(system, cb)
        except STUCK as exc:
            try:
                mixed_successors(system, cs, guide=True)
            except STUCK:
                return SimReport(True, h_final=cs.h, steps=i, note=f"both stuck: {exc}")
            return _fail(i, exc, None, "only the concrete side is stuck", cs.h, i)
        if not sb:
            if cs.active is None and not any(
                    isinstance(x, IMLPart) and isinstance(x.proc, (Output, Run)) or
                    isinstance(x, ProgPart) and not _blocked(system, x) for x in cs.pool):
                return SimReport(True, h_final=cs.h, steps=i)
            return _fail(i, None, None, "only the concrete side terminated", cs.h, i)
        if isinstance(cs.active, ProgPart) and cs.active.pc in \
                system.program(cs.active.entry).partition.loops:
            r = _lockstep_loop(system, cb, cs)
            if isinstance(r, SimReport):
                r.steps = i
                return r
            cb, cs = r
            continue
        j = _pick(system, sb, rnd)
        cx = sb[j]
        try:
            ss = mixed_successors(system, cs, guide=True)
        except STUCK as exc:
            return _fail(i, cx.event, exc, "only the symbolic side is stuck", cs.h, i)
        if len(ss) != len(sb):
            return _fail(i, cx.event, [x.event for x in ss], "successor counts differ", cs.h, i)
        sx = ss[j]
        if not sx.state.h.extends(h):
            return _fail(i, cx.event, sx.event, "h shrank", cs.h, i)
        h = sx.state.h
        g = _all_defs(sx.state)
        if not events_match(cx.event, sx.event, g) or cx.prob != sx.prob:
            return _fail(i, cx.event, sx.event, "events differ", h, i)
        cb, cs = cx.state, sx.state
        if not check_sim_state(h, cb, cs):
            return _fail(i, cx.event, sx.event, "states unrelated", h, i)
    return SimReport(True, h_final=h, steps=depth, note="depth bound")


def _pick(system: MixedSystem, succ: List[MixedSucc], rnd: random.Random) -> int:
    """Random successor; a scheduling choice avoids members that are stuck at once."""
    if len(succ) == 1:
        return 0
    idx = list(range(len(succ)))
    if succ[0].kind == "sched":
        live = []
        for i in idx:
            try:
                mixed_successors(system, succ[i].state)
            except STUCK:
                continue
            live.append(i)
        idx = live or idx
    return rnd.choice(idx)


def _lockstep_loop(system: MixedSystem, cb: MixedState, cs: MixedState):
    """Run the concrete loop to its exit and bind the symbolic counter."""
    ps: ProgPart = cs.active
    prog = system.program(ps.entry)
    entry = ps.pc
    g = _all_defs(cs)
    succ = sym_step(prog, _sym_sync(ps.state, cs), system.sym_cfg, g)
    loops = [(st, ev) for st, ev in succ if isinstance(ev, Loop)]
    if not loops:
        # the loop was unrolled: an ordinary block step
        return _plain_step(system, cb, cs)
    summary = loops[0][1].summary
    if "family" in summary.kinds.values():
        return _fail(0, None, loops[0][1], "lockstep over loops with per-iteration values is unsupported", cs.h)
    iters, state = 0, cb
    events = []
    while True:
        x = mixed_successors(system, state)
        if len(x) != 1:
            return _fail(0, None, None, "loop body forks concretely", cs.h)
        state = x[0].state
        events.append(x[0].event)
        act = state.active
        if not isinstance(act, ProgPart):
            return _fail(0, events, None, "loop left the participant", cs.h)
        if act.pc == entry:
            iters += 1
        elif act.pc == summary.exit:
            break
        if iters > 1 << summary.counter.width:
            return _fail(0, None, None, "loop count exceeds the counter width", cs.h)
    if any(not isinstance(e, (Tau, Crypto)) for e in events):
        return _fail(0, events, None, "observable event inside a summarized loop", cs.h)
    h2 = cs.h.copy()
    h2.bind(summary.counter.name, Bits(iters, summary.counter.width))
    for st2, ev in loops:
        g2 = _h_with_defs(h2, st2)
        try:
            ok = interpret(g2, st2.phi).value
        except (Unbound, Undefined):
            ok = False
        if ok:
            new = replace(cs, active=ProgPart(ps.entry, st2), ctr=_ctr_of(st2.env), h=_h_with_defs(h2, st2))
            if not check_sim_state(new.h, state, new):
                return _fail(0, None, ev, "states unrelated after the loop", new.h)
            return state, new
    return _fail(0, None, None, "no loop exit matches the concrete count", h2)


def _plain_step(system, cb, cs):
    [cx] = mixed_successors(system, cb)
    [sx] = mixed_successors(system, cs, guide=True)
    if not events_match(cx.event, sx.event, _all_defs(sx.state)):
        return _fail(0, cx.event, sx.event, "events differ", sx.state.h)
    return cx.state, sx.state


def iml_model_context(system: MixedSystem, ecfg: Optional[ExtractConfig] = None,
                      model_k: Optional[int] = None) -> IMLContext:
    """IML context whose ``run`` constructs start the extracted models."""
    sym_cfg = replace(system.sym_cfg, k=model_k or max(system.k, 4))
    runs = {}
    for entry, p in system.programs.items():
        runs[entry] = run_target(p, sym_cfg, ecfg, entry)
    return IMLContext(system.ctx.registry, dict(system.ctx.maxlen), system.ctx.default_maxlen, runs)


def _fr_prob(events) -> Fraction:
    out = Fraction(1)
    for e in events:
        if isinstance(e, Fresh):
            out /= 1 << e.value.length
    return out


def replay_iml(ctx: IMLContext, process: Process, expected: Sequence[Any],
               max_steps: int) -> Optional[List[Tuple[Any, Fraction]]]:
    """An IML trace whose projection is ``expected``, found depth first."""
    stack = [(IMLState.start(process), 0, [])]
    while stack:
        s, pos, steps = stack.pop()
        if pos == len(expected):
            return steps
        if len(steps) >= max_steps:
            continue
        try:
            succ = iml_successors(ctx, s)
        except (IMLStuck, IMLError):
            continue
        for x in reversed(succ):
            pe = project(x.event)
            if pe is None:
                stack.append((x.state, pos, steps + [(x.event, x.prob)]))
            elif pe == expected[pos]:
                stack.append((x.state, pos + 1, steps + [(x.event, x.prob)]))
    return None


def differential_run_sbir_iml(system: MixedSystem, iml: Process, depth: int = 60,
                              ctx: Optional[IMLContext] = None) -> SimReport:
    """Every symbolic mixed trace has an IML trace of the extracted system.

    Matching traces have equal projected events under ``h`` and the IML
    trace has probability ``2^-(bits drawn)``.
    """
    try:
        ictx = ctx or iml_model_context(system)
    except (ExtractionError, SymExecError) as exc:
        return SimReport(False, {"reason": f"extraction failed: {exc}"})
    s0 = initial_mixed(system, iml, "sbir")
    traces, partial = mixed_traces(system, s0, depth)
    h_last = s0.h
    for n_path, t in enumerate(traces):
        st = t.state
        g = _all_defs(st)
        try:
            model = solve(st.total_phi(), g, system.sym_cfg.solver)
        except SolverUnknown as exc:
            return SimReport(False, {"path": n_path, "reason": f"solver: {exc}"}, g, paths=n_path)
        if model is None:
            return SimReport(False, {"path": n_path, "reason": "infeasible path"}, g, paths=n_path)
        exps = [v for e in t.events for v in _event_exps(e)]
        for k, v in complete_model(model, exps, g.defs, g.values).items():
            if k not in g.values:
                g.bind(k, v)
        try:
            grounded = [ground(e, g) for e in t.events]
        except (Unbound, Undefined) as exc:
            return SimReport(False, {"path": n_path, "reason": f"event not grounded: {exc}"}, g,
                             paths=n_path)
        expected = [pe for pe in (project(e) for e in grounded) if pe is not None]
        found = replay_iml(ictx, iml, expected, max_steps=4 * depth + 20)
        if found is None:
            return SimReport(False, {"path": n_path, "expected": expected, "status": t.status,
                                     "reason": "no IML trace with these events"}, g, paths=n_path)
        evs = [e for e, _ in found]
        fr_s = sum(1 for e in grounded if isinstance(e, Fresh))
        fr_i = sum(1 for e in evs if isinstance(e, Fresh))
        pr_i = Fraction(1)
        for _, p in found:
            pr_i *= p
        if fr_s != fr_i or pr_i != _fr_prob(evs) or pr_i != _fr_prob(grounded):
            return SimReport(False, {"path": n_path, "reason": "probabilities differ",
                                     "fr": (fr_s, fr_i), "pr": pr_i}, g, paths=n_path)
        h_last = g
    return SimReport(True, h_final=h_last, paths=len(traces), note="partial" if partial else "")
