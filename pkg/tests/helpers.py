"""Seeded generators shared by the unit and acceptance tests."""

from __future__ import annotations

import itertools
import os
import random
from typing import Dict, List, Tuple

from birproto.bir import LabelVal, initial_state, run_concrete
from birproto.birparse import load_program, parse_program
from birproto.bits import Bits
from birproto.iml import (
    NIL, Assume, Event, IApp, IBits, IExp, If, Input, IVar, Let, New, Output, Par, Process, Repl,
    parse_process,
)
from birproto.mixed import MixedSystem
from birproto.loops import loop_step
from birproto.solver import solve
from birproto.events import Loop
from birproto.symexec import SymConfig, initial_sym_state, sym_step
from birproto.symexp import TRUE, Interpretation, SConst, SVar, SymExp, const, interpret, mk_bin, mk_ite

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
EXAMPLES = os.path.join(ROOT, "examples")
RUNNING = os.path.join(EXAMPLES, "running")


def running_system(k: int = 1) -> MixedSystem:
    c = load_program(os.path.join(RUNNING, "client.bir"))
    s = load_program(os.path.join(RUNNING, "server.bir"))
    return MixedSystem({"client": c, "server": s}, n=4, k=k)


def attacker(name: str) -> Process:
    with open(os.path.join(RUNNING, f"{name}.iml")) as f:
        return parse_process(f.read())


# -- pure IML processes ----------------------------------------------------

class ProcGen:
    """Random closed processes; every channel has exactly one sender and one receiver."""

    def __init__(self, rnd: random.Random, max_bits: int = 6):
        self.rnd = rnd
        self.bits_left = max_bits
        self.names = itertools.count()
        self.chans = itertools.count()

    def var(self) -> str:
        return f"v{next(self.names)}"

    def exp(self, scope: List[Tuple[str, int]], width: int) -> IExp:
        same = [v for v, w in scope if w == width]
        r = self.rnd.random()
        if same and r < 0.45:
            return IVar(self.rnd.choice(same))
        if same and r < 0.75:
            op = self.rnd.choice(["XOR", "AND", "OR", "PLUS"])
            return IApp(op, (IVar(self.rnd.choice(same)), IBits(Bits(self.rnd.randrange(1 << width), width))))
        return IBits(Bits(self.rnd.randrange(1 << width), width))

    def cond(self, scope: List[Tuple[str, int]]) -> IExp:
        w = self.rnd.choice([w for _, w in scope]) if scope else 1
        op = self.rnd.choice(["EQ", "NEQ", "LT", "LE"])
        return IApp(op, (self.exp(scope, w), self.exp(scope, w)))

    def proc(self, scope: List[Tuple[str, int]], depth: int) -> Process:
        if depth <= 0:
            return NIL
        kinds = ["let", "if", "event", "assume", "comm", "repl"]
        if self.bits_left > 0:
            kinds += ["new", "new"]
        k = self.rnd.choice(kinds)
        if k == "new":
            n = self.rnd.randint(1, min(3, self.bits_left))
            self.bits_left -= n
            v = self.var()
            return New(v, n, self.proc(scope + [(v, n)], depth - 1))
        if k == "let":
            w = self.rnd.choice([w for _, w in scope]) if scope else 2
            v = self.var()
            return Let(v, self.exp(scope, w), self.proc(scope + [(v, w)], depth - 1))
        if k == "if":
            return If(self.cond(scope), self.proc(scope, depth - 1), self.proc(scope, depth - 1))
        if k == "event":
            args = (self.exp(scope, self.rnd.choice([w for _, w in scope])),) if scope else ()
            return Event(self.rnd.choice(["a", "b"]), args, self.proc(scope, depth - 1))
        if k == "assume":
            return Assume(self.cond(scope), self.proc(scope, depth - 1))
        if k == "repl":
            body = Event("tick", (IVar("r"),))
            return Repl("r", self.rnd.randint(1, 2), body, self.proc(scope, depth - 1))
        # a matched pair of output and input on a private channel
        c = f"c{next(self.chans)}"
        w = self.rnd.choice([w for _, w in scope]) if scope else 2
        x = self.var()
        sender = Output(c, (), self.exp(scope, w), self.proc(scope, depth - 2))
        receiver = Input(c, (), x, self.proc(scope + [(x, w)], depth - 2))
        return Par(receiver, sender) if self.rnd.random() < 0.5 else Par(sender, receiver)


def random_process(seed: int, depth: int = 6, max_bits: int = 6) -> Process:
    return ProcGen(random.Random(seed), max_bits).proc([], depth)


# -- counter loops ---------------------------------------------------------

def loop_program(seed: int, summarizable: bool = True) -> Tuple[str, dict]:
    """A counter loop with bound 1..5 over the 8-bit argument ``arg``."""
    r = random.Random(seed)
    b = r.randint(1, 5)
    c = r.randrange(1, 256)
    guard = r.choice([f"I < {b}:8", f"I != {b}:8"])
    body = [f"S := S + {c}:8", "W := S ^ A", "I := I + 1:8"]
    if not summarizable:
        # a value that depends on its own previous non-affine value
        body.append(r.choice([f"U := (U * 3:8) ^ {c}:8", "U := U ^ S"]))
    r.shuffle(body)
    with_event = r.random() < 0.5
    lines = ["block main:", "  P := R0", "  A := load(Mem, P + 1:64, 8)", "  I := 0:8", "  S := A",
             "  W := 0:8", "  U := A", "  jmp @head",
             "block head:", f"  cjmp {guard}, @body, @out", "block body:"]
    lines += ["  " + x for x in body]
    if with_event:
        lines += ["  call tick, back", "block back:"]
    lines += ["  jmp @head", "block out:", "  halt"]
    cfg = {"loops": {"head": "out"}, "params": {"main": [["arg", 8]]}}
    if with_event:
        cfg["events"] = ["tick"]
        cfg["event_arity"] = {"tick": 0}
    return "\n".join(lines) + "\n", cfg


LOOP_REGS = ("I", "S", "W", "U", "A")


def _holds(h: Interpretation, st) -> bool:
    return bool(interpret(Interpretation(dict(h.values), dict(st.defs)), st.phi).value)


def _guided_to(prog, stop, h: Interpretation, cfg: SymConfig, summarize: bool):
    """Follow the path ``h`` selects up to ``stop``; a loop exit takes a counter model.

    Returns the state, its interpretation and whether a summary was used.
    """
    s = initial_sym_state(prog, cfg=cfg)
    while s.pc != stop:
        g = Interpretation(dict(h.values), dict(s.defs))
        if not (summarize and s.pc in prog.partition.loops):
            [(s, _)] = sym_step(prog, s, cfg, g)
            continue
        outs = loop_step(prog, s, cfg, g)
        if not any(isinstance(ev, Loop) for _, ev in outs):
            [s] = [st for st, _ in outs if _holds(h, st)]
            continue
        for st, _ in outs:
            g2 = Interpretation(dict(h.values), dict(st.defs))
            m = solve(st.phi, g2, cfg.solver)
            if m is not None:
                g2.values.update(m)
                return st, g2, True
        raise AssertionError("no loop exit is consistent with the interpretation")
    return s, Interpretation(dict(h.values), dict(s.defs)), False


def loop_exit_values(seed: int, arg: int, summarizable: bool = True):
    """Register values at the loop exit by summary, by symbolic unrolling and concretely."""
    text, cfg = loop_program(seed, summarizable)
    looped = parse_program(text, cfg)
    plain_cfg = {k: v for k, v in cfg.items() if k != "loops"}
    plain = parse_program(text, plain_cfg)
    tr = run_concrete(plain, initial_state(plain, "main", [Bits(arg, 8)]))
    conc_env = next(s for s in tr.states if s.pc == "out").env
    scfg = SymConfig(n=4, k=1, unroll_bound=16)
    scfg.diagnostics = []
    h = Interpretation({"arg": Bits(arg, 8)})
    sst, g1, summarized = _guided_to(looped, "out", h, scfg, True)
    ust, g2, _ = _guided_to(plain, "out", h, SymConfig(n=4, k=1), False)
    summary = {r: interpret(g1, sst.env[r]) for r in LOOP_REGS}
    unrolled = {r: interpret(g2, ust.env[r]) for r in LOOP_REGS}
    concrete = {r: conc_env[r] for r in LOOP_REGS}
    return summary, unrolled, concrete, summarized, list(scfg.diagnostics)


# -- indirect jump targets -------------------------------------------------

def random_target(seed: int) -> Tuple[SymExp, Dict[str, int], List[str]]:
    """An ite tree over at most 10 bits of symbols whose leaves are labels."""
    r = random.Random(seed)
    widths: Dict[str, int] = {}
    total = r.randint(1, 10)
    while sum(widths.values()) < total:
        w = r.randint(1, min(4, total - sum(widths.values())))
        widths[f"s{len(widths)}"] = w
    labels = [f"L{i}" for i in range(r.randint(1, 6))]

    def cond(d):
        name = r.choice(list(widths))
        x = SVar(name, widths[name])
        k = const(r.randrange(1 << widths[name]), widths[name])
        op = r.choice(["EQ", "NEQ", "LT", "LE"])
        c = mk_bin(op, x, k)
        if d > 0 and r.random() < 0.3:
            c = mk_bin(r.choice(["AND", "OR"]), c, cond(d - 1))
        return c

    def tree(d):
        if d == 0 or r.random() < 0.3:
            return SConst(LabelVal(r.choice(labels)))
        return mk_ite(cond(1), tree(d - 1), tree(d - 1))

    return tree(4), widths, labels


def brute_force_targets(target: SymExp, widths: Dict[str, int], phi: SymExp = TRUE) -> set:
    names = list(widths)
    out = set()
    for values in itertools.product(*[range(1 << widths[n]) for n in names]):
        h = Interpretation({n: Bits(v, widths[n]) for n, v in zip(names, values)})
        if not interpret(h, phi).value:
            continue
        v = interpret(h, target)
        out.add(v.name if isinstance(v, LabelVal) else v.value)
    return out
