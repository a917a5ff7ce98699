"""Observable events shared by the BIR, symbolic, IML and mixed layers.

Payload fields hold ``Bits`` in concrete traces and symbolic expressions in
symbolic traces.  ``Comm`` is the IML-side record of a message handed over
on a channel; its step is silent, it only annotates the trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional, Sequence, Tuple

from .bits import Bits


@dataclass(frozen=True)
class Tau:
    def short(self) -> str:
        return "tau"


@dataclass(frozen=True)
class Fresh:
    value: Any
    index: int = 0
    name: Optional[str] = None
    # symbolic layer: the tape read this symbol stands for
    defn: Any = None

    def short(self) -> str:
        return f"fr[{self.index}]"


@dataclass(frozen=True)
class Crypto:
    value: Any
    op: str = ""
    # symbolic layer: the application the fresh result names
    defn: Any = None

    def short(self) -> str:
        return f"crypto[{self.op}]"


@dataclass(frozen=True)
class Ev:
    name: str
    args: Tuple[Any, ...] = ()
    # symbolic layer: the loaded expressions the fresh arguments name
    defs: Optional[Tuple[Any, ...]] = None

    def short(self) -> str:
        return f"ev[{self.name}]"


@dataclass(frozen=True)
class Out:
    payload: Any
    chan: str = "c"
    ids: Tuple[Any, ...] = ()

    def short(self) -> str:
        return f"out[{self.chan}]"


@dataclass(frozen=True)
class In:
    payload: Any
    chan: str = "c"
    ids: Tuple[Any, ...] = ()

    def short(self) -> str:
        return f"in[{self.chan}]"


@dataclass(frozen=True)
class Loop:
    counter: Any
    # concrete iteration count when known
    count: Optional[int] = None
    # symbolic layer: the LoopSummary behind this step
    summary: Any = field(default=None, compare=False, repr=False)

    def short(self) -> str:
        return "loop"


@dataclass(frozen=True)
class Fail:
    reason: str = "assert"

    def short(self) -> str:
        return f"fail[{self.reason}]"


@dataclass(frozen=True)
class Comm:
    chan: str
    ids: Tuple[Any, ...]
    payload: Any

    def short(self) -> str:
        return f"comm[{self.chan}]"


TAU = Tau()


def payload_of(ev) -> Sequence[Any]:
    if isinstance(ev, Fresh):
        return (ev.value,)
    if isinstance(ev, Crypto):
        return (ev.value,)
    if isinstance(ev, Ev):
        return ev.args
    if isinstance(ev, (Out, In, Comm)):
        return (ev.payload,)
    if isinstance(ev, Loop):
        return (ev.counter,) if ev.count is None else ()
    return ()


def _hex(v: Any) -> str:
    if isinstance(v, Bits):
        return v.hex() if v.length else "-"
    return str(v)


def format_record(idx: int, prob: Fraction, ev) -> str:
    """One ``idx|prob|event|payload-hex`` line."""
    payload = ",".join(_hex(v) for v in payload_of(ev))
    if isinstance(ev, Loop) and ev.count is not None:
        payload = str(ev.count)
    return f"{idx}|{prob}|{ev.short()}|{payload}"


def format_trace(events: Iterable, probs: Optional[Iterable[Fraction]] = None) -> str:
    events = list(events)
    probs = list(probs) if probs is not None else [Fraction(1)] * len(events)
    return "\n".join(format_record(i, p, e) for i, (e, p) in enumerate(zip(events, probs)))


# -- projection used by properties and cross-layer comparisons -----------

@dataclass(frozen=True)
class TraceEvent:
    """Layer-independent view: kind is ``ev``, ``fr`` or ``msg``."""

    kind: str
    name: str
    args: Tuple[Any, ...]


def project(ev) -> Optional[TraceEvent]:
    if isinstance(ev, Ev):
        return TraceEvent("ev", ev.name, tuple(ev.args))
    if isinstance(ev, Fresh):
        return TraceEvent("fr", "", (ev.value,))
    if isinstance(ev, (Out, In, Comm)):
        return TraceEvent("msg", ev.chan, (ev.payload,))
    return None


def project_all(events: Iterable) -> list[TraceEvent]:
    out = []
    for e in events:
        p = project(e)
        if p is not None:
            out.append(p)
    return out
