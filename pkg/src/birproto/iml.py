"""IML: a small applied-pi calculus over bitstrings.

A state has at most one active process and a pool of waiting processes.
The active process runs until it outputs, which hands control to the
unique pool member waiting on the same channel, or until it stops, at
which point a scheduler picks a pool member that can start by itself
(an output or a ``run``).  ``new`` draws uniformly, so each of its
successors carries probability ``2^-n``; every other step has
probability 1.  Probabilities are exact fractions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .bits import Bits
from .events import TAU, Comm, Ev, Fresh, Tau
from .ops import OpRegistry, default_registry

DEFAULT_MAXLEN = 1 << 16


class IMLError(Exception):
    """A semantic error: the process is ill-formed for the rule it hit."""


class IMLStuck(Exception):
    """No rule applies (undefined guard, missing receiver, ...)."""


# -- expressions ---------------------------------------------------------

class IExp:
    pass


@dataclass(frozen=True)
class IBits(IExp):
    value: Bits


@dataclass(frozen=True)
class IVar(IExp):
    name: str


@dataclass(frozen=True)
class IApp(IExp):
    fn: str
    args: Tuple[IExp, ...]


# -- processes -----------------------------------------------------------

class Process:
    pass


@dataclass(frozen=True)
class Nil(Process):
    pass


NIL = Nil()


@dataclass(frozen=True)
class Par(Process):
    left: Process
    right: Process


@dataclass(frozen=True)
class Repl(Process):
    """``m`` sequential copies of ``body`` with ``counter`` = 1..m, then ``cont``."""

    counter: str
    m: int
    body: Process
    cont: Process = NIL
    index: int = 1


@dataclass(frozen=True)
class New(Process):
    var: str
    n: int
    cont: Process = NIL


@dataclass(frozen=True)
class Input(Process):
    chan: str
    ids: Tuple[IExp, ...]
    var: str
    cont: Process = NIL


@dataclass(frozen=True)
class Output(Process):
    chan: str
    ids: Tuple[IExp, ...]
    exp: IExp
    cont: Process = NIL


@dataclass(frozen=True)
class Event(Process):
    name: str
    args: Tuple[IExp, ...]
    cont: Process = NIL


@dataclass(frozen=True)
class If(Process):
    cond: IExp
    then: Process
    else_: Process = NIL


@dataclass(frozen=True)
class Let(Process):
    var: str
    exp: IExp
    cont: Process = NIL


@dataclass(frozen=True)
class Assume(Process):
    cond: IExp
    cont: Process = NIL


@dataclass(frozen=True)
class Run(Process):
    """Start the program entry ``pc`` with the given arguments."""

    pc: Any
    args: Tuple[IExp, ...] = ()


def seq(p: Process, k: Process) -> Process:
    """``p`` with ``k`` in place of its sequential ``0`` leaves."""
    if k == NIL:
        return p
    if isinstance(p, Nil):
        return k
    if isinstance(p, New):
        return replace(p, cont=seq(p.cont, k))
    if isinstance(p, (Input, Output, Event, Let, Assume)):
        return replace(p, cont=seq(p.cont, k))
    if isinstance(p, If):
        return If(p.cond, seq(p.then, k), seq(p.else_, k))
    if isinstance(p, Repl):
        return replace(p, cont=seq(p.cont, k))
    # a parallel composition or a run has no single sequential end
    return p


# -- evaluation ----------------------------------------------------------

Env = Dict[str, Optional[Bits]]


@dataclass
class RunTarget:
    params: Tuple[str, ...]
    process: Process


@dataclass
class IMLContext:
    registry: OpRegistry = field(default_factory=default_registry)
    maxlen: Dict[str, int] = field(default_factory=dict)
    default_maxlen: int = DEFAULT_MAXLEN
    runs: Dict[Any, RunTarget] = field(default_factory=dict)

    def maxlen_of(self, chan: str) -> int:
        return self.maxlen.get(chan, self.default_maxlen)


def ieval(ctx: IMLContext, env: Mapping[str, Optional[Bits]], e: IExp) -> Optional[Bits]:
    """Value of ``e``; ``None`` stands for bottom and propagates."""
    if isinstance(e, IBits):
        return e.value
    if isinstance(e, IVar):
        if e.name not in env:
            raise IMLError(f"unbound variable {e.name}")
        return env[e.name]
    if isinstance(e, IApp):
        args = [ieval(ctx, env, a) for a in e.args]
        if e.fn not in ctx.registry:
            raise IMLError(f"unknown function {e.fn}")
        return ctx.registry.apply(e.fn, args)
    raise IMLError(f"bad expression {e!r}")


def truncate(b: Bits, m: int) -> Bits:
    return b.truncate(m)


# -- states --------------------------------------------------------------

Member = Tuple[Tuple[Tuple[str, Optional[Bits]], ...], Process]


def freeze(env: Mapping[str, Optional[Bits]]) -> Tuple[Tuple[str, Optional[Bits]], ...]:
    return tuple(sorted(env.items()))


@dataclass(frozen=True)
class IMLState:
    active: Optional[Member]
    pool: Tuple[Member, ...] = ()
    fresh_count: int = 0

    @staticmethod
    def start(p: Process, env: Optional[Mapping[str, Optional[Bits]]] = None) -> "IMLState":
        return IMLState((freeze(env or {}), p))


def reduce(ctx: IMLContext, procs: Iterable[Tuple[Mapping[str, Optional[Bits]], Process]]) -> List[Member]:
    """Silently run processes until each reaches a visible prefix.

    ``0`` members disappear and parallel compositions split.  A member
    stops at an input, output, run, event or random draw; all but inputs
    can later be scheduled.
    """
    out: List[Member] = []
    work = [(dict(env), p) for env, p in procs]
    while work:
        env, p = work.pop(0)
        while True:
            if isinstance(p, Nil):
                break
            if isinstance(p, Par):
                work.insert(0, (dict(env), p.right))
                p = p.left
                continue
            if isinstance(p, Let):
                env = {**env, p.var: ieval(ctx, env, p.exp)}
                p = p.cont
                continue
            if isinstance(p, If):
                v = ieval(ctx, env, p.cond)
                if v is None:
                    raise IMLStuck("if on an undefined value")
                p = p.then if v.truthy() else p.else_
                continue
            if isinstance(p, Assume):
                v = ieval(ctx, env, p.cond)
                if v is None:
                    raise IMLStuck("assume on an undefined value")
                if not v.truthy():
                    p = NIL
                    continue
                p = p.cont
                continue
            if isinstance(p, Repl):
                env, p = unfold_repl(env, p)
                continue
            if isinstance(p, (Input, Output, Run, Event, New)):
                out.append((freeze(env), p))
                break
            raise IMLError(f"unknown process {p!r}")
    return out


def unfold_repl(env: Dict[str, Optional[Bits]], p: Repl):
    if p.index > p.m:
        return env, p.cont
    nxt = replace(p, index=p.index + 1)
    width = max(8, p.m.bit_length())
    return {**env, p.counter: Bits(p.index & ((1 << width) - 1), width)}, seq(p.body, nxt)


def _receivers(ctx: IMLContext, pool: Sequence[Member], chan: str, ids: Tuple[Bits, ...]) -> List[int]:
    found = []
    for i, (env, q) in enumerate(pool):
        if isinstance(q, Input) and q.chan == chan:
            qids = tuple(ieval(ctx, dict(env), e) for e in q.ids)
            if qids == ids:
                found.append(i)
    return found


@dataclass
class Successor:
    state: IMLState
    event: Any
    prob: Fraction
    kind: str = "det"  # det | prob | sched


@dataclass
class LocalStep:
    env: Dict[str, Optional[Bits]]
    proc: Process
    event: Any = TAU
    prob: Fraction = Fraction(1)
    kind: str = "det"
    fresh_count: int = 0


def step_local(ctx: IMLContext, env: Dict[str, Optional[Bits]], p: Process,
               fresh_count: int) -> Optional[List[LocalStep]]:
    """Rules that touch only the active process.

    ``None`` means the rule needs the pool (``0``, ``|``, ``in``, ``out``,
    ``run``).
    """
    def go(p2, env2=None, ev=TAU, prob=Fraction(1), kind="det", fresh=fresh_count):
        return LocalStep(env if env2 is None else env2, p2, ev, prob, kind, fresh)

    if isinstance(p, Let):
        return [go(p.cont, {**env, p.var: ieval(ctx, env, p.exp)})]
    if isinstance(p, New):
        prob = Fraction(1, 1 << p.n)
        idx = fresh_count + 1
        return [go(p.cont, {**env, p.var: Bits(b, p.n)}, Fresh(Bits(b, p.n), idx, p.var), prob, "prob", idx)
                for b in range(1 << p.n)]
    if isinstance(p, Event):
        args = tuple(ieval(ctx, env, a) for a in p.args)
        if any(a is None for a in args):
            raise IMLStuck(f"event {p.name} with an undefined argument")
        return [go(p.cont, ev=Ev(p.name, args))]
    if isinstance(p, If):
        v = ieval(ctx, env, p.cond)
        if v is None:
            raise IMLStuck("if on an undefined value")
        return [go(p.then if v.truthy() else p.else_)]
    if isinstance(p, Assume):
        v = ieval(ctx, env, p.cond)
        if v is None:
            raise IMLStuck("assume on an undefined value")
        return [go(p.cont if v.truthy() else NIL)]
    if isinstance(p, Repl):
        env2, p2 = unfold_repl(env, p)
        return [go(p2, env2)]
    if isinstance(p, (Nil, Par, Input, Output, Run)):
        return None
    raise IMLError(f"unknown process {p!r}")


def output_of(ctx: IMLContext, env: Mapping[str, Optional[Bits]], p: Output) -> Tuple[Bits, Tuple[Bits, ...]]:
    """Truncated payload and channel ids of an output."""
    b = ieval(ctx, env, p.exp)
    ids = tuple(ieval(ctx, env, e) for e in p.ids)
    if b is None or any(i is None for i in ids):
        raise IMLStuck("output of an undefined value")
    return truncate(b, ctx.maxlen_of(p.chan)), ids


def iml_successors(ctx: IMLContext, s: IMLState) -> List[Successor]:
    """Every successor; an empty list means the state is final."""
    if s.active is not None and isinstance(s.active[1], Nil):
        # a finished active process leaves silently
        s = IMLState(None, s.pool, s.fresh_count)
    if s.active is None:
        out = []
        for i, (env, q) in enumerate(s.pool):
            if not isinstance(q, Input):
                pool = s.pool[:i] + s.pool[i + 1:]
                out.append(Successor(IMLState((env, q), pool, s.fresh_count), TAU, Fraction(1), "sched"))
        return out
    fenv, p = s.active
    env = dict(fenv)
    local = step_local(ctx, env, p, s.fresh_count)
    if local is not None:
        return [Successor(IMLState((freeze(x.env), x.proc), s.pool, x.fresh_count), x.event, x.prob, x.kind)
                for x in local]
    if isinstance(p, (Nil, Par, Input)):
        members = reduce(ctx, [(env, p)])
        return [Successor(IMLState(None, s.pool + tuple(members), s.fresh_count), TAU, Fraction(1))]
    if isinstance(p, Output):
        b, ids = output_of(ctx, env, p)
        recv = _receivers(ctx, s.pool, p.chan, ids)
        if not recv:
            raise IMLStuck(f"no receiver on {p.chan}")
        if len(recv) > 1:
            raise IMLError(f"{len(recv)} receivers on {p.chan}; the receiver must be unique")
        j = recv[0]
        qenv, q = s.pool[j]
        rest = s.pool[:j] + s.pool[j + 1:]
        rest = rest + tuple(reduce(ctx, [(env, p.cont)]))
        new_active = (freeze({**dict(qenv), q.var: b}), q.cont)
        return [Successor(IMLState(new_active, rest, s.fresh_count), Comm(p.chan, ids, b), Fraction(1))]
    if isinstance(p, Run):
        target = ctx.runs.get(p.pc)
        if target is None:
            raise IMLError(f"run of unknown entry {p.pc}")
        args = run_args(ctx, env, p)
        if len(args) != len(target.params):
            raise IMLError(f"run {p.pc} expects {len(target.params)} arguments")
        st = IMLState((freeze(dict(zip(target.params, args))), target.process), s.pool, s.fresh_count)
        return [Successor(st, TAU, Fraction(1))]
    raise IMLError(f"unknown process {p!r}")


def run_args(ctx: IMLContext, env: Mapping[str, Optional[Bits]], p: Run) -> Tuple[Bits, ...]:
    args = tuple(ieval(ctx, env, a) for a in p.args)
    if any(a is None for a in args):
        raise IMLStuck("run with an undefined argument")
    return args


def iml_step(ctx: IMLContext, s: IMLState, choice: int = 0) -> Tuple[IMLState, Any, Fraction]:
    succ = iml_successors(ctx, s)
    if not succ:
        raise IMLStuck("no step possible")
    x = succ[choice]
    return x.state, x.event, x.prob


# -- traces --------------------------------------------------------------

@dataclass
class IMLTrace:
    steps: List[Tuple[Any, Fraction]] = field(default_factory=list)
    status: str = "done"  # done | stuck | error | depth
    reason: str = ""

    @property
    def events(self) -> List[Any]:
        return [e for e, _ in self.steps]

    def observable(self) -> List[Any]:
        return [e for e, _ in self.steps if not isinstance(e, Tau)]


def pr(t: IMLTrace) -> Fraction:
    out = Fraction(1)
    for _, p in t.steps:
        out *= p
    return out


@dataclass
class Enumeration:
    traces: List[Tuple[IMLTrace, Optional[IMLState]]]
    partial: bool


def enumerate_traces(ctx: IMLContext, s0: IMLState, depth: int = 100,
                     scheduler: str = "all", max_traces: int = 100_000) -> Enumeration:
    """Every maximal trace up to ``depth`` steps with its exact probability.

    ``scheduler='all'`` forks over every scheduling choice; ``'first'``
    always starts the first schedulable pool member.
    """
    out: List[Tuple[IMLTrace, Optional[IMLState]]] = []
    partial = False
    stack = [(s0, [])]
    while stack:
        s, steps = stack.pop()
        if len(out) >= max_traces:
            partial = True
            break
        if len(steps) >= depth:
            out.append((IMLTrace(steps, "depth"), s))
            partial = True
            continue
        try:
            succ = iml_successors(ctx, s)
        except IMLStuck as exc:
            out.append((IMLTrace(steps, "stuck", str(exc)), s))
            continue
        except IMLError as exc:
            out.append((IMLTrace(steps, "error", str(exc)), s))
            continue
        if not succ:
            out.append((IMLTrace(steps, "done"), s))
            continue
        if scheduler == "first" and succ[0].kind == "sched":
            succ = succ[:1]
        for x in reversed(succ):
            stack.append((x.state, steps + [(x.event, x.prob)]))
    return Enumeration(out, partial)


# -- printing ------------------------------------------------------------

INFIX = {"OR": "\\/", "XOR": "^", "AND": "/\\", "EQ": "=", "NEQ": "<>", "LT": "<", "LE": "<=",
         "LSL": "<<", "LSR": ">>", "PLUS": "+", "MINUS": "-", "MULT": "*", "DIV": "/", "MOD": "%"}
_LEVELS = [("OR",), ("XOR",), ("AND",), ("EQ", "NEQ"), ("LT", "LE"), ("LSL", "LSR"),
           ("PLUS", "MINUS"), ("MULT", "DIV", "MOD")]
_PREC = {op: i for i, ops in enumerate(_LEVELS) for op in ops}
_BY_SYM = {v: k for k, v in INFIX.items()}


def format_bits(b: Bits) -> str:
    if b.length and b.length % 4 == 0 and b.length >= 8:
        return "0x" + b.hex()
    return "0b" + b.to_str()


def format_iexp(e: IExp, prec: int = -1) -> str:
    if isinstance(e, IBits):
        return format_bits(e.value)
    if isinstance(e, IVar):
        return e.name
    if isinstance(e, IApp):
        if e.fn in INFIX and len(e.args) == 2:
            p = _PREC[e.fn]
            s = f"{format_iexp(e.args[0], p)} {INFIX[e.fn]} {format_iexp(e.args[1], p + 1)}"
            return f"({s})" if p < prec else s
        if e.fn == "NOT" and len(e.args) == 1:
            return "~" + format_iexp(e.args[0], len(_LEVELS))
        return f"{e.fn}({', '.join(format_iexp(a) for a in e.args)})"
    raise TypeError(e)


def _chan(c: str, ids) -> str:
    return f"{c}[{', '.join(format_iexp(i) for i in ids)}]" if ids else c


def format_process(p: Process) -> str:
    """Surface syntax; a trailing ``0`` after ``;`` is left out."""
    return _fmt(p)


def _tail(p: Process) -> str:
    return "" if isinstance(p, Nil) else " " + _fmt(p, True)


def _fmt(p: Process, nested: bool = False) -> str:
    if isinstance(p, Nil):
        return "0"
    if isinstance(p, Par):
        return f"({_fmt(p.left)} | {_fmt(p.right)})"
    if isinstance(p, New):
        return f"new {p.var}: fixed_{p.n};" + _tail(p.cont)
    if isinstance(p, Let):
        return f"let {p.var} = {format_iexp(p.exp)} in " + _fmt(p.cont, True)
    if isinstance(p, Event):
        args = f"({', '.join(format_iexp(a) for a in p.args)})" if p.args else ""
        return f"event {p.name}{args};" + _tail(p.cont)
    if isinstance(p, Output):
        return f"out({_chan(p.chan, p.ids)}, {format_iexp(p.exp)});" + _tail(p.cont)
    if isinstance(p, Input):
        return f"in({_chan(p.chan, p.ids)}, {p.var});" + _tail(p.cont)
    if isinstance(p, If):
        s = f"if {format_iexp(p.cond)} then ({_fmt(p.then)})"
        if not isinstance(p.else_, Nil):
            s += f" else ({_fmt(p.else_)})"
        return s
    if isinstance(p, Assume):
        return f"assume {format_iexp(p.cond)};" + _tail(p.cont)
    if isinstance(p, Repl):
        idx = f"@{p.index}" if p.index != 1 else ""
        s = f"!^{{{p.counter}<={p.m}{idx}}} ({_fmt(p.body)})"
        return s + (";" + _tail(p.cont) if not isinstance(p.cont, Nil) else "")
    if isinstance(p, Run):
        return f"run {p.pc}({', '.join(format_iexp(a) for a in p.args)})"
    raise TypeError(p)


# -- parsing -------------------------------------------------------------

class IMLParseError(Exception):
    pass


_TOK = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<bits>0b[01]*|0x[0-9a-fA-F]+)
  | (?P<num>\d+)
  | (?P<repl>!\^\{)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9.#@]*)
  | (?P<op>\\/|/\\|<>|<=|<<|>>|[-+*/%^=<~(),;:|\[\]{}@])
""", re.VERBOSE)

_KEYWORDS = {"new", "let", "in", "event", "out", "if", "then", "else", "assume", "run"}


def _lex(text: str) -> List[Tuple[str, str]]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOK.match(text, pos)
        if not m:
            raise IMLParseError(f"unexpected character {text[pos]!r} at offset {pos}")
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group()))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0

    def peek(self, k: int = 0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else (None, None)

    def next(self):
        t = self.peek()
        if t[0] is None:
            raise IMLParseError("unexpected end of input")
        self.i += 1
        return t

    def expect(self, text: str):
        t = self.next()
        if t[1] != text:
            raise IMLParseError(f"expected {text!r}, found {t[1]!r}")

    def ident(self) -> str:
        kind, text = self.next()
        if kind != "ident":
            raise IMLParseError(f"expected a name, found {text!r}")
        return text

    def proc(self) -> Process:
        p = self.seqproc()
        while self.peek()[1] == "|":
            self.next()
            p = Par(p, self.seqproc())
        return p

    def cont(self) -> Process:
        if self.peek()[1] in (None, ")", "|", "else"):
            return NIL
        return self.seqproc()

    def semi_cont(self) -> Process:
        # the ';' may be dropped when nothing follows
        if self.peek()[1] in (None, ")", "|", "else"):
            return NIL
        self.expect(";")
        return self.cont()

    def seqproc(self) -> Process:
        kind, text = self.peek()
        if text == "0" and kind == "num":
            self.next()
            return NIL
        if text == "(":
            self.next()
            p = self.proc()
            self.expect(")")
            return p
        if kind == "repl":
            self.next()
            counter = self.ident()
            self.expect("<=")
            m = int(self.next()[1])
            index = 1
            if self.peek()[1] == "@":
                self.next()
                index = int(self.next()[1])
            self.expect("}")
            body = self.seqproc()
            cont = NIL
            if self.peek()[1] == ";":
                self.next()
                cont = self.cont()
            return Repl(counter, m, body, cont, index)
        if text == "new":
            self.next()
            var = self.ident()
            self.expect(":")
            ty = self.ident()
            if not ty.startswith("fixed_") or not ty[6:].isdigit():
                raise IMLParseError(f"unknown type {ty}")
            return New(var, int(ty[6:]), self.semi_cont())
        if text == "let":
            self.next()
            var = self.ident()
            self.expect("=")
            e = self.exp()
            self.expect("in")
            return Let(var, e, self.seqproc())
        if text == "event":
            self.next()
            name = self.ident()
            args: Tuple[IExp, ...] = ()
            if self.peek()[1] == "(":
                self.next()
                args = self.exps(")")
            return Event(name, args, self.semi_cont())
        if text == "out":
            self.next()
            self.expect("(")
            chan, ids = self.chan()
            self.expect(",")
            e = self.exp()
            self.expect(")")
            return Output(chan, ids, e, self.semi_cont())
        if text == "in":
            self.next()
            self.expect("(")
            chan, ids = self.chan()
            self.expect(",")
            var = self.ident()
            self.expect(")")
            return Input(chan, ids, var, self.semi_cont())
        if text == "if":
            self.next()
            c = self.exp()
            self.expect("then")
            a = self.seqproc()
            b = NIL
            if self.peek()[1] == "else":
                self.next()
                b = self.seqproc()
            return If(c, a, b)
        if text == "assume":
            self.next()
            c = self.exp()
            return Assume(c, self.semi_cont())
        if text == "run":
            self.next()
            kind, lab = self.next()
            pc = int(lab) if kind == "num" else lab
            self.expect("(")
            return Run(pc, self.exps(")"))
        raise IMLParseError(f"unexpected {text!r}")

    def chan(self):
        name = self.ident()
        ids: Tuple[IExp, ...] = ()
        if self.peek()[1] == "[":
            self.next()
            ids = self.exps("]")
        return name, ids

    def exps(self, close: str) -> Tuple[IExp, ...]:
        out = []
        if self.peek()[1] == close:
            self.next()
            return ()
        while True:
            out.append(self.exp())
            t = self.next()[1]
            if t == close:
                return tuple(out)
            if t != ",":
                raise IMLParseError(f"expected ',' or {close!r}, found {t!r}")

    def exp(self, level: int = 0) -> IExp:
        if level == len(_LEVELS):
            return self.unary()
        left = self.exp(level + 1)
        while True:
            kind, text = self.peek()
            op = _BY_SYM.get(text) if kind == "op" else None
            if op is not None and op in _LEVELS[level]:
                self.next()
                left = IApp(op, (left, self.exp(level + 1)))
            else:
                return left

    def unary(self) -> IExp:
        if self.peek()[1] == "~":
            self.next()
            return IApp("NOT", (self.unary(),))
        kind, text = self.next()
        if kind == "bits":
            if text.startswith("0b"):
                return IBits(Bits.from_str(text[2:]))
            return IBits(Bits.from_hex(text))
        if text == "(":
            e = self.exp()
            self.expect(")")
            return e
        if kind == "ident" and text not in _KEYWORDS:
            if self.peek()[1] == "(":
                self.next()
                return IApp(text, self.exps(")"))
            return IVar(text)
        raise IMLParseError(f"unexpected {text!r} in expression")


def parse_process(text: str) -> Process:
    p = _Parser(text)
    proc = p.proc()
    if p.peek()[0] is not None:
        raise IMLParseError(f"trailing input {p.peek()[1]!r}")
    return proc


def parse_iexp(text: str) -> IExp:
    p = _Parser(text)
    e = p.exp()
    if p.peek()[0] is not None:
        raise IMLParseError(f"trailing input {p.peek()[1]!r}")
    return e


# -- alpha-equivalence ---------------------------------------------------

def canonical(p: Process) -> Process:
    """Rename bound variables to ``_0, _1, ...`` in binding order."""
    counter = [0]

    def fresh() -> str:
        counter[0] += 1
        return f"_{counter[0] - 1}"

    def ex(e: IExp, ren: Dict[str, str]) -> IExp:
        if isinstance(e, IVar):
            return IVar(ren.get(e.name, e.name))
        if isinstance(e, IApp):
            return IApp(e.fn, tuple(ex(a, ren) for a in e.args))
        return e

    def go(p: Process, ren: Dict[str, str]) -> Process:
        if isinstance(p, Nil):
            return p
        if isinstance(p, Par):
            return Par(go(p.left, ren), go(p.right, ren))
        if isinstance(p, New):
            v = fresh()
            return New(v, p.n, go(p.cont, {**ren, p.var: v}))
        if isinstance(p, Let):
            v = fresh()
            return Let(v, ex(p.exp, ren), go(p.cont, {**ren, p.var: v}))
        if isinstance(p, Input):
            v = fresh()
            return Input(p.chan, tuple(ex(i, ren) for i in p.ids), v, go(p.cont, {**ren, p.var: v}))
        if isinstance(p, Output):
            return Output(p.chan, tuple(ex(i, ren) for i in p.ids), ex(p.exp, ren), go(p.cont, ren))
        if isinstance(p, Event):
            return Event(p.name, tuple(ex(a, ren) for a in p.args), go(p.cont, ren))
        if isinstance(p, If):
            return If(ex(p.cond, ren), go(p.then, ren), go(p.else_, ren))
        if isinstance(p, Assume):
            return Assume(ex(p.cond, ren), go(p.cont, ren))
        if isinstance(p, Repl):
            v = fresh()
            inner = {**ren, p.counter: v}
            return Repl(v, p.m, go(p.body, inner), go(p.cont, ren), p.index)
        if isinstance(p, Run):
            return Run(p.pc, tuple(ex(a, ren) for a in p.args))
        raise TypeError(p)

    return go(p, {})


def alpha_equal(p: Process, q: Process) -> bool:
    return canonical(p) == canonical(q)


def free_vars(p: Process) -> set:
    out: set = set()

    def ex(e: IExp, bound: frozenset):
        if isinstance(e, IVar) and e.name not in bound:
            out.add(e.name)
        elif isinstance(e, IApp):
            for a in e.args:
                ex(a, bound)

    def go(p: Process, bound: frozenset):
        if isinstance(p, Par):
            go(p.left, bound); go(p.right, bound)
        elif isinstance(p, New):
            go(p.cont, bound | {p.var})
        elif isinstance(p, Let):
            ex(p.exp, bound); go(p.cont, bound | {p.var})
        elif isinstance(p, Input):
            for i in p.ids:
                ex(i, bound)
            go(p.cont, bound | {p.var})
        elif isinstance(p, Output):
            for i in p.ids:
                ex(i, bound)
            ex(p.exp, bound); go(p.cont, bound)
        elif isinstance(p, Event):
            for a in p.args:
                ex(a, bound)
            go(p.cont, bound)
        elif isinstance(p, If):
            ex(p.cond, bound); go(p.then, bound); go(p.else_, bound)
        elif isinstance(p, Assume):
            ex(p.cond, bound); go(p.cont, bound)
        elif isinstance(p, Repl):
            go(p.body, bound | {p.counter}); go(p.cont, bound)
        elif isinstance(p, Run):
            for a in p.args:
                ex(a, bound)

    go(p, frozenset())
    return out
