"""Seeded generator of small BIR programs with an attacker context.

Each program is loop free, starts at ``main`` and mixes every statement
kind (assignments, assertions, stores, direct, indirect and conditional
jumps, halt) with calls into every label set: library operations,
attacker send and receive, the RNG and events.  The number of RNG calls
on any path stays within the tape bound so that both the concrete and
symbolic runs see the same draws.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .bir import BirProgram
from .bits import chunk_for
from .birparse import parse_program
from .iml import Process, parse_process

ENTRY = "main"
SCRATCH = 0x10F0_0000
EVENTS = ("ev_a", "bad")


@dataclass
class CorpusItem:
    name: str
    source: str
    iml_text: str
    program: BirProgram
    process: Process
    rng_calls: int = 0
    # some event call sits inside a branch arm
    event_in_branch: bool = False


@dataclass
class _Gen:
    rnd: random.Random
    n: int
    max_rng: int
    recv_width: int = 8
    lines: List[str] = field(default_factory=list)
    counter: int = 0
    uses: Dict[str, bool] = field(default_factory=dict)
    event_in_branch: bool = False

    def label(self, stem: str) -> str:
        self.counter += 1
        return f"{stem}{self.counter}"

    def block(self, label: str) -> None:
        self.lines.append(f"block {label}:")

    def emit(self, stmt: str) -> None:
        self.lines.append("  " + stmt)

    # -- expressions over the 8-bit registers V0..V2 ---------------------
    def exp8(self, depth: int = 2) -> str:
        r = self.rnd.random()
        if depth == 0 or r < 0.3:
            if self.rnd.random() < 0.5:
                return f"V{self.rnd.randrange(3)}"
            return f"{self.rnd.randrange(256)}:8"
        if r < 0.8:
            op = self.rnd.choice(["+", "-", "*", "/", "%", "&", "|", "^", "<<", ">>"])
            return f"({self.exp8(depth - 1)} {op} {self.exp8(depth - 1)})"
        if r < 0.9:
            return f"ite({self.cond(depth - 1)}, {self.exp8(depth - 1)}, {self.exp8(depth - 1)})"
        return f"cast({self.cond(depth - 1)}, 8)"

    def cond(self, depth: int = 1) -> str:
        op = self.rnd.choice(["==", "!=", "<", "<="])
        return f"({self.exp8(depth)} {op} {self.exp8(depth)})"

    # -- program pieces --------------------------------------------------
    def segment(self, cur: str, bufs: List[Tuple[str, int, str]], rng_used: int, depth: int) -> Tuple[str, int]:
        """Emit statements after block ``cur``; returns the open block and RNG count."""
        kinds = ["assign", "assign", "op", "event", "store", "assert"]
        if rng_used < self.max_rng:
            kinds += ["rng", "rng"]
        if bufs:
            kinds += ["send"]
        kinds += ["recv"]
        if depth < 2:
            kinds += ["branch", "branch", "indirect"]
        kind = self.rnd.choice(kinds)
        if kind == "assign":
            self.emit(f"V{self.rnd.randrange(3)} := {self.exp8()}")
            return cur, rng_used
        if kind == "assert":
            # mostly true so that paths survive
            if self.rnd.random() < 0.7:
                self.emit(f"assert ({self.exp8(1)} == {self.exp8(1)}) | (1:1 == 1:1)")
            else:
                self.emit(f"assert {self.cond(1)}")
            return cur, rng_used
        if kind == "store":
            off = self.rnd.randrange(4)
            self.emit(f"Mem := store(Mem, {SCRATCH + off}:64, {self.exp8(1)}, 8)")
            self.emit(f"V{self.rnd.randrange(3)} := load(Mem, {SCRATCH + off}:64, 8)")
            return cur, rng_used
        nxt = self.label("b")
        if kind == "rng":
            self.uses["rng"] = True
            self.emit(f"call rng, {nxt}")
            self.block(nxt)
            p = f"P{len(bufs)}"
            self.emit(f"{p} := R0")
            bufs.append((p, self.n, "Mem"))
            # the first drawn bit feeds a register
            self.emit(f"V{self.rnd.randrange(3)} := cast(load(Mem, {p} + 1:64, {chunk_for(self.n)}), 8)")
            return nxt, rng_used + 1
        if kind == "recv":
            self.uses["recv"] = True
            self.emit(f"call net_recv, {nxt}")
            self.block(nxt)
            p = f"P{len(bufs)}"
            self.emit(f"{p} := R0")
            bufs.append((p, self.recv_width, "Mem_A"))
            self.emit(f"V{self.rnd.randrange(3)} := load(Mem_A, {p} + 1:64, 8)")
            return nxt, rng_used
        if kind == "send":
            self.uses["send"] = True
            p = self.rnd.choice(bufs)[0]
            self.emit(f"R0 := {p}")
            self.emit(f"call net_send, {nxt}")
            self.block(nxt)
            return nxt, rng_used
        if kind == "event":
            name = self.rnd.choice(EVENTS)
            self.uses[name] = True
            if name == "ev_a" and bufs:
                p = self.rnd.choice(bufs)[0]
                self.emit(f"R1 := {p}")
            elif name == "ev_a":
                return cur, rng_used
            self.emit(f"call {name}, {nxt}")
            self.event_in_branch |= depth > 0
            self.block(nxt)
            return nxt, rng_used
        if kind == "op":
            if not bufs:
                return cur, rng_used
            p, w, _ = self.rnd.choice(bufs)
            q, wq, _ = self.rnd.choice(bufs)
            choices = [("mac", 2, 8), ("conc1", 1, w + 1), ("enc", 2, wq + 8)]
            if w == wq:
                choices.append(("xor", 2, w))
            if w + wq <= 32:
                choices.append(("conc", 2, w + wq))
            op, arity, width = self.rnd.choice(choices)
            self.uses[op] = True
            self.emit(f"R1 := {p}")
            if arity == 2:
                self.emit(f"R2 := {q}")
            self.emit(f"call {op}, {nxt}")
            self.block(nxt)
            r = f"P{len(bufs)}"
            self.emit(f"{r} := R0")
            bufs.append((r, width, "Mem_Op"))
            return nxt, rng_used
        if kind in ("branch", "indirect"):
            then_l, else_l, join = self.label("t"), self.label("e"), self.label("j")
            c = self.branch_cond(bufs)
            if kind == "branch":
                self.emit(f"cjmp {c}, @{then_l}, @{else_l}")
            else:
                self.emit(f"T := ite({c}, @{then_l}, @{else_l})")
                self.emit("jmp T")
            top = rng_used
            for lab in (then_l, else_l):
                self.block(lab)
                cur2, used = lab, rng_used
                local = list(bufs)
                for _ in range(self.rnd.randrange(1, 3)):
                    cur2, used = self.segment(cur2, local, used, depth + 1)
                top = max(top, used)
                if self.rnd.random() < 0.15:
                    self.emit("halt")
                else:
                    self.emit(f"jmp @{join}")
            self.block(join)
            # buffers made inside the arms are out of scope after the join
            return join, top
        raise AssertionError(kind)

    def branch_cond(self, bufs: List[Tuple[str, int, str]]) -> str:
        if bufs and self.rnd.random() < 0.6:
            p, w, region = self.rnd.choice(bufs)
            c = chunk_for(w)
            return f"(load({region}, {p} + 1:64, {c}) & 1:{c}) == 1:{c}"
        return self.cond(1)


def _partition(uses: Dict[str, bool], recv_width: int, n: int, with_param: bool) -> dict:
    ops = [o for o in ("enc", "mac", "conc1", "xor", "conc") if uses.get(o)]
    cfg = {
        "n": n,
        "start": ENTRY,
        "rng": ["rng"] if uses.get("rng") else [],
        "ops": ops,
        "events": [e for e in EVENTS if uses.get(e)],
        "event_arity": {e: (1 if e == "ev_a" else 0) for e in EVENTS if uses.get(e)},
        "attacker_send": ["net_send"] if uses.get("send") else [],
        "attacker_recv": ["net_recv"] if uses.get("recv") else [],
        "channels": {},
        "recv_width": {},
    }
    if uses.get("send"):
        cfg["channels"]["net_send"] = {"chan": "c"}
    if uses.get("recv"):
        cfg["channels"]["net_recv"] = {"chan": "d"}
        cfg["recv_width"]["net_recv"] = recv_width
    if with_param:
        cfg["params"] = {ENTRY: [["arg", 8]]}
    return cfg


def generate(seed: int, n: int = 4, max_rng: int = 2, segments: int = 4,
             name: Optional[str] = None) -> CorpusItem:
    """One program plus its attacker context, fully determined by ``seed``."""
    rnd = random.Random(seed)
    g = _Gen(rnd, n, max_rng)
    with_param = rnd.random() < 0.5
    g.block(ENTRY)
    bufs: List[Tuple[str, int, str]] = []
    if with_param:
        g.emit("P9 := R0")
        bufs.append(("P9", 8, "Mem"))
    for i in range(3):
        g.emit(f"V{i} := {rnd.randrange(256)}:8")
    cur, used = ENTRY, 0
    for _ in range(segments):
        cur, used = g.segment(cur, bufs, used, 0)
    g.emit("halt")
    cfg = _partition(g.uses, g.recv_width, n, with_param)
    source = "\n".join(g.lines) + "\n---\n" + json.dumps(cfg, indent=1) + "\n"
    name = name or f"prog_{seed:05d}"
    program = parse_program(source, name=name)
    iml_text = _context(rnd, g, with_param)
    return CorpusItem(name, source, iml_text, program, parse_process(iml_text), used, g.event_in_branch)


def _context(rnd: random.Random, g: _Gen, with_param: bool) -> str:
    arg = f"0x{rnd.randrange(256):02x}" if with_param else ""
    parts = [f"run {ENTRY}({arg})"]
    if g.uses.get("send"):
        parts.append("!^{i<=4} (in(c, x); event seen(x))" if rnd.random() < 0.5 else "!^{i<=4} in(c, x)")
    if g.uses.get("recv"):
        k = rnd.randrange(256)
        parts.append(f"!^{{j<=3}} out(d, 0x{k:02x} ^ j)")
    return " | ".join(parts) + "\n"


def generate_corpus(count: int, seed: int = 0, n: int = 4, max_rng: int = 2) -> List[CorpusItem]:
    """``count`` items named ``prog_0000`` onwards; equal arguments give equal items."""
    return [generate(seed * 1_000_003 + i, n, max_rng, name=f"prog_{i:04d}") for i in range(count)]


def write_corpus(directory: str, count: int, seed: int = 0, n: int = 4) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    out = []
    for item in generate_corpus(count, seed, n):
        base = os.path.join(directory, item.name)
        with open(base + ".bir", "w") as fh:
            fh.write(item.source)
        with open(base + ".iml", "w") as fh:
            fh.write(f"# attacker context for {item.name}\n" + item.iml_text)
        out.append(base)
    return out


def load_corpus(directory: str) -> List[Tuple[str, BirProgram, Process]]:
    """Pairs of ``name.bir`` and ``name.iml`` in ``directory``."""
    from .birparse import load_program
    items = []
    for fname in sorted(os.listdir(directory)):
        if not fname.endswith(".bir"):
            continue
        base = os.path.join(directory, fname[:-4])
        with open(base + ".iml") as fh:
            proc = parse_process(fh.read())
        items.append((fname[:-4], load_program(base + ".bir"), proc))
    return items
