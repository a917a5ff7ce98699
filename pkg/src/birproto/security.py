"""Trace properties and exact insecurity of IML and mixed systems.

Insecurity is the probability of reaching a minimal violating prefix.
It is computed by a recursion over the step relation: probabilistic
forks are summed with their weights, scheduling forks take the maximum
(the attacker picks the worst order), and a path stops at its first
violation so that no prefix is counted twice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable, Iterable, List, Optional, Sequence, Set, Tuple

from .bir import RandomTape
from .bits import Bits
from .events import TraceEvent, project, project_all
from .iml import IMLContext, IMLState, Process, iml_successors
from .mixed import (
    STUCK, MixedSucc, MixedSystem, ProgPart, iml_model_context, initial_mixed, mixed_successors,
)

Predicate = Callable[[Sequence[TraceEvent]], bool]


@dataclass
class TraceProperty:
    """A prefix-closed set of projected event traces, given by membership."""

    name: str
    predicate: Predicate
    prefix_closed: bool = True

    def __call__(self, trace: Sequence[Any]) -> bool:
        return self.predicate(as_projected(trace))


def as_projected(trace: Sequence[Any]) -> List[TraceEvent]:
    if all(isinstance(e, TraceEvent) for e in trace):
        return list(trace)
    return project_all(trace)


def auth_property(accept_s: str, accept_c: str) -> TraceProperty:
    """Every ``accept_s`` follows an earlier ``accept_c`` with equal arguments."""
    def pred(t: Sequence[TraceEvent]) -> bool:
        seen = set()
        for e in t:
            if e.kind != "ev":
                continue
            if e.name == accept_c:
                seen.add(e.args)
            if e.name == accept_s and e.args not in seen:
                return False
        return True
    return TraceProperty(f"auth({accept_s}, {accept_c})", pred)


def weak_secrecy_property(secret_selector: Callable[[List[Bits]], Iterable[Bits]] | Sequence[int],
                          channels: Optional[Iterable[str]] = None) -> TraceProperty:
    """No message on an attacker channel equals a selected fresh value.

    ``secret_selector`` gets the fresh values in order and returns the
    secrets, or is a list of 1-based positions among them.  ``channels``
    limits the check to the attacker's channels (all by default).
    """
    if not callable(secret_selector):
        positions = list(secret_selector)

        def select(frs):
            return [frs[i - 1] for i in positions if 0 < i <= len(frs)]
    else:
        select = secret_selector
    chans = None if channels is None else set(channels)

    def pred(t: Sequence[TraceEvent]) -> bool:
        frs: List[Bits] = []
        for e in t:
            if e.kind == "fr":
                frs.append(e.args[0])
            elif e.kind == "msg" and (chans is None or e.name in chans):
                if e.args[0] in set(select(frs)):
                    return False
        return True
    return TraceProperty("weak-secrecy", pred)


def no_event_property(names: Iterable[str]) -> TraceProperty:
    bad = set(names)
    return TraceProperty(f"no({', '.join(sorted(bad))})",
                         lambda t: not any(e.kind == "ev" and e.name in bad for e in t))


def property_from_config(cfg: dict) -> TraceProperty:
    """``{"mode": "auth"|"secrecy"|"forbid", ...}``."""
    mode = cfg.get("mode")
    if mode == "auth":
        return auth_property(cfg["accept"], cfg["marker"])
    if mode == "secrecy":
        return weak_secrecy_property(cfg.get("secrets", [1]), cfg.get("channels"))
    if mode == "forbid":
        return no_event_property(cfg["events"])
    raise ValueError(f"unknown property mode {mode!r}")


def load_property(path: str) -> TraceProperty:
    with open(path) as fh:
        return property_from_config(json.load(fh))


def shortest_violations(traces: Iterable[Sequence[Any]], psi: TraceProperty) -> Set[Tuple[TraceEvent, ...]]:
    """Minimal violating prefixes of the given traces."""
    out = set()
    for t in traces:
        pt = as_projected(t)
        if psi.predicate(pt):
            continue
        for i in range(1, len(pt) + 1):
            if not psi.predicate(pt[:i]):
                out.add(tuple(pt[:i]))
                break
    return out


@dataclass
class InsecurityResult:
    value: Fraction
    violating_traces: List[Tuple[Tuple[TraceEvent, ...], Fraction]] = field(default_factory=list)
    partial: bool = False
    tape_count: Optional[int] = None
    n: Optional[int] = None
    k: Optional[int] = None

    def __str__(self) -> str:
        flag = " (lower bound)" if self.partial else ""
        return f"{self.value.numerator}/{self.value.denominator} = {float(self.value):.6g}{flag}"


class _Search:
    """The recursion shared by both layers."""

    def __init__(self, successors, psi: TraceProperty, depth: int):
        self.successors = successors
        self.psi = psi
        self.depth = depth
        self.partial = False
        self.witnesses: List[Tuple[Tuple[TraceEvent, ...], Fraction]] = []

    def run(self, s) -> Fraction:
        return self.value(s, (), 0, Fraction(1))

    def value(self, s, trace: Tuple[TraceEvent, ...], steps: int, weight: Fraction) -> Fraction:
        if steps >= self.depth:
            self.partial = True
            return Fraction(0)
        try:
            succ = self.successors(s)
        except STUCK:
            return Fraction(0)
        if not succ:
            return Fraction(0)
        vals = []
        for x in succ:
            pe = project(x.event)
            t2 = trace + (pe,) if pe is not None else trace
            w2 = weight * x.prob
            if pe is not None and not self.psi.predicate(t2):
                self.witnesses.append((t2, w2))
                vals.append(Fraction(1))
            else:
                vals.append(self.value(x.state, t2, steps + 1, w2))
        if succ[0].kind in ("sched", "branch"):
            return max(vals)
        return sum((x.prob * v for x, v in zip(succ, vals)), Fraction(0))


def insecurity_iml(i: Process, n: int, depth: int, psi: TraceProperty,
                   ctx: Optional[IMLContext] = None) -> InsecurityResult:
    ctx = ctx or IMLContext()
    search = _Search(lambda s: iml_successors(ctx, s), psi, depth)
    v = search.run(IMLState.start(i))
    return InsecurityResult(v, search.witnesses, search.partial, None, n, None)


def _lazy_tape_successors(system: MixedSystem, k: int):
    """Mixed steps where the tape word an RNG call needs is drawn on demand.

    Summing over the drawn words with weight ``2^-w`` each equals the
    average over all ``2^(n k)`` tapes, but a scheduling choice cannot
    depend on words that have not been read yet.
    """
    w = system.word_width
    l = system.n // w

    def succ(s):
        act = s.active
        if s.flavor == "bir" and isinstance(act, ProgPart):
            kind, _ = system.program(act.entry).partition.classify(act.pc)
            have = len(s.tape.words)
            if kind == "rng" and s.ctr + l > have and have < k * l:
                out = []
                for v in range(1 << w):
                    tape = RandomTape(s.tape.words + (Bits(v, w),), w)
                    out.append(MixedSucc(replace(s, tape=tape), None, Fraction(1, 1 << w), "prob"))
                return out
        return mixed_successors(system, s)
    return succ


def insecurity_bir(i: Process, system: MixedSystem, n: int, k: int, depth: int,
                   psi: TraceProperty) -> InsecurityResult:
    """Insecurity of the concrete mixed system averaged over all tapes."""
    if system.n != n:
        raise ValueError(f"system draws {system.n} bits per call, not {n}")
    search = _Search(_lazy_tape_successors(system, k), psi, depth)
    s0 = initial_mixed(system, i, "bir", RandomTape((), system.word_width))
    v = search.run(s0)
    return InsecurityResult(v, search.witnesses, search.partial, 1 << (n * k), n, k)


def insecurity_bir_by_tapes(i: Process, system: MixedSystem, n: int, k: int, depth: int,
                            psi: TraceProperty) -> InsecurityResult:
    """The same average taken tape by tape, for systems without scheduling choices."""
    w = system.word_width
    words = k * (n // w)
    total = Fraction(0)
    partial = False
    witnesses = []
    for t in range(1 << (w * words)):
        tape = RandomTape(tuple(Bits((t >> (w * (words - 1 - j))) & ((1 << w) - 1), w)
                                for j in range(words)), w)
        search = _Search(lambda s: mixed_successors(system, s), psi, depth)
        total += search.run(initial_mixed(system, i, "bir", tape))
        partial |= search.partial
        witnesses.extend(search.witnesses)
    return InsecurityResult(total / (1 << (w * words)), witnesses, partial, 1 << (w * words), n, k)


@dataclass
class PreservationReport:
    insec_bir: InsecurityResult
    insec_iml: InsecurityResult

    @property
    def holds(self) -> bool:
        return self.insec_bir.value <= self.insec_iml.value

    def to_text(self) -> str:
        lines = [f"insec(program) = {self.insec_bir}", f"insec(model)   = {self.insec_iml}",
                 f"holds: {str(self.holds).lower()}"]
        if not self.holds:
            for t, p in self.insec_bir.violating_traces:
                lines.append(f"program witness {p}: {[(e.kind, e.name) for e in t]}")
            for t, p in self.insec_iml.violating_traces:
                lines.append(f"model witness {p}: {[(e.kind, e.name) for e in t]}")
        return "\n".join(lines)


def check_attack_preservation(i: Process, system: MixedSystem, n: int, k: int, depth: int,
                              psi: TraceProperty, ctx: Optional[IMLContext] = None) -> PreservationReport:
    """Compare the program system with the system of its extracted models."""
    ib = insecurity_bir(i, system, n, k, depth, psi)
    ctx = ctx or iml_model_context(system)
    ii = insecurity_iml(i, n, depth, psi, ctx)
    return PreservationReport(ib, ii)
