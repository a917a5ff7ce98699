"""Concrete BIR: syntax, evaluation and the crypto-extended step relation.

A program is a list of labelled blocks plus a label partition that marks
which labels are library entry points, attacker send/receive functions,
random number generators and event functions.  Those functions have no
body; stepping onto one of their entry points performs the whole call as
one atomic transition and returns to the label held in the link register
``LR``.  A normal block runs all of its statements in one step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

from .bits import Bits, WidthError, apply_binop, apply_unop, chunk_for, word, WORD_WIDTHS
from .events import TAU, Crypto, Ev, Fail, Fresh, In, Out, Tau
from .ops import OpRegistry, UnknownOp, default_registry

Label = Union[str, int]

# reserved environment names
RM, CTR, LR = "RM", "ctr", "LR"
HEAP, HEAP_OP, HEAP_A = "heap", "heap_Op", "heap_A"
MEM, MEM_OP, MEM_A = "Mem", "Mem_Op", "Mem_A"
REGION_OF_HEAP = {HEAP: MEM, HEAP_OP: MEM_OP, HEAP_A: MEM_A}
REGION_BASE = {MEM: 0x1000_0000, MEM_OP: 0x2000_0000, MEM_A: 0x3000_0000}
REGION_SIZE = 0x0100_0000
ADDR_WIDTH = 64
LEN_WIDTH = 128
REGISTERS = tuple(f"R{i}" for i in range(8))


class BirError(Exception):
    """A step cannot be taken."""


class Blocked(BirError):
    """Attacker receive on an empty channel; a scheduler must supply input."""


class TapeExhausted(BirError):
    pass


# -- values --------------------------------------------------------------

@dataclass(frozen=True)
class LabelVal:
    name: Label

    def __repr__(self) -> str:
        return f"@{self.name}"


class Memory:
    """Cell-addressed memory: one word per address, written cells only."""

    __slots__ = ("cells",)

    def __init__(self, cells: Optional[Mapping[int, Bits]] = None):
        self.cells: Dict[int, Bits] = dict(cells or {})

    def get(self, addr: int) -> Optional[Bits]:
        return self.cells.get(addr)

    def set(self, addr: int, val: Bits) -> "Memory":
        cells = dict(self.cells)
        cells[addr] = val
        return Memory(cells)

    def set_many(self, items: Iterable[Tuple[int, Bits]]) -> "Memory":
        cells = dict(self.cells)
        cells.update(items)
        return Memory(cells)

    def __eq__(self, other) -> bool:
        return isinstance(other, Memory) and self.cells == other.cells

    def __hash__(self) -> int:
        return hash(frozenset(self.cells.items()))

    def __repr__(self) -> str:
        return f"Memory({len(self.cells)} cells)"


@dataclass(frozen=True)
class RandomTape:
    """k*l words of width w; one RNG call reads l words (n = l*w bits)."""

    words: Tuple[Bits, ...]
    w: int

    def __post_init__(self):
        for x in self.words:
            if x.length != self.w:
                raise WidthError(f"tape word of width {x.length}, expected {self.w}")

    @staticmethod
    def from_bits(tape: Bits, w: int) -> "RandomTape":
        return RandomTape(tuple(tape.chunks(w)) if tape.length else (), w)


BirVal = Union[Bits, LabelVal, Memory]


# -- syntax --------------------------------------------------------------

class BirExp:
    pass


@dataclass(frozen=True)
class Const(BirExp):
    value: Union[Bits, LabelVal]


@dataclass(frozen=True)
class Var(BirExp):
    name: str


@dataclass(frozen=True)
class UnOp(BirExp):
    op: str
    arg: BirExp
    width: Optional[int] = None


@dataclass(frozen=True)
class BinOp(BirExp):
    op: str
    left: BirExp
    right: BirExp


@dataclass(frozen=True)
class IfThenElse(BirExp):
    cond: BirExp
    then: BirExp
    else_: BirExp


@dataclass(frozen=True)
class Load(BirExp):
    mem: BirExp
    addr: BirExp
    width: int


@dataclass(frozen=True)
class Store(BirExp):
    mem: BirExp
    addr: BirExp
    value: BirExp
    width: int


class BirStmt:
    pass


@dataclass(frozen=True)
class Assign(BirStmt):
    var: str
    exp: BirExp


@dataclass(frozen=True)
class Assert(BirStmt):
    exp: BirExp


@dataclass(frozen=True)
class Halt(BirStmt):
    pass


@dataclass(frozen=True)
class Jmp(BirStmt):
    target: BirExp


@dataclass(frozen=True)
class CJmp(BirStmt):
    cond: BirExp
    then: BirExp
    else_: BirExp


@dataclass(frozen=True)
class Block:
    label: Label
    stmts: Tuple[BirStmt, ...]


@dataclass(frozen=True)
class ChannelSpec:
    chan: str = "c"
    ids: Tuple[BirExp, ...] = ()


@dataclass
class LabelPartition:
    normal: frozenset = frozenset()
    ops: Dict[str, frozenset] = field(default_factory=dict)
    attacker_send: frozenset = frozenset()
    attacker_recv: frozenset = frozenset()
    rng: frozenset = frozenset()
    events: Dict[str, frozenset] = field(default_factory=dict)
    loops: frozenset = frozenset()
    entries: Dict[str, frozenset] = field(default_factory=dict)
    exits: Dict[Label, Label] = field(default_factory=dict)
    # per-function details
    event_arity: Dict[str, int] = field(default_factory=dict)
    channels: Dict[Label, ChannelSpec] = field(default_factory=dict)
    recv_width: Dict[Label, int] = field(default_factory=dict)
    params: Dict[Label, Tuple[Tuple[str, int], ...]] = field(default_factory=dict)

    def op_labels(self) -> frozenset:
        return frozenset().union(*self.ops.values()) if self.ops else frozenset()

    def event_labels(self) -> frozenset:
        return frozenset().union(*self.events.values()) if self.events else frozenset()

    def top_sets(self) -> Dict[str, frozenset]:
        return {
            "normal": self.normal,
            "ops": self.op_labels(),
            "attacker": self.attacker_send | self.attacker_recv,
            "rng": self.rng,
            "events": self.event_labels(),
        }

    def validate(self) -> None:
        sets = self.top_sets()
        names = list(sets)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                both = sets[a] & sets[b]
                if both:
                    raise BirError(f"partition overlap between {a} and {b}: {sorted(map(str, both))}")
        if self.attacker_send & self.attacker_recv:
            raise BirError("a label is both attacker send and receive")
        op_names = list(self.ops)
        for i, a in enumerate(op_names):
            for b in op_names[i + 1:]:
                if self.ops[a] & self.ops[b]:
                    raise BirError(f"op label sets {a} and {b} overlap")
        if not self.loops <= self.normal:
            raise BirError("loop entries must be normal labels")
        for lp in self.loops:
            if lp not in self.exits:
                raise BirError(f"loop entry {lp} has no exit")
        for set_name, ents in self.entries.items():
            if set_name in sets and not ents <= sets[set_name]:
                raise BirError(f"entry points of {set_name} are outside the set")

    def entry_points(self, set_name: str) -> frozenset:
        if set_name in self.entries:
            return self.entries[set_name]
        return self.top_sets()[set_name]

    def classify(self, label: Label) -> Tuple[str, Optional[str]]:
        """Return (kind, detail) with kind in normal/op/send/recv/rng/event."""
        for name, labs in self.ops.items():
            if label in labs:
                return "op", name
        if label in self.attacker_send:
            return "send", None
        if label in self.attacker_recv:
            return "recv", None
        if label in self.rng:
            return "rng", None
        for name, labs in self.events.items():
            if label in labs:
                return "event", name
        return "normal", None

    def is_entry(self, kind: str, label: Label) -> bool:
        set_name = {"op": "ops", "send": "attacker", "recv": "attacker", "rng": "rng",
                    "event": "events", "normal": "normal"}[kind]
        return label in self.entry_points(set_name)


@dataclass
class BirProgram:
    blocks: Tuple[Block, ...]
    partition: LabelPartition = field(default_factory=LabelPartition)
    name: str = "prog"
    # free-form settings from the config (start label, rng bits, ...)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self._index: Dict[Label, int] = {}
        for i, b in enumerate(self.blocks):
            if b.label in self._index:
                raise BirError(f"duplicate label {b.label}")
            self._index[b.label] = i
        if not self.partition.normal:
            self.partition.normal = frozenset(self._index)

    @property
    def start(self) -> Label:
        if "start" in self.meta:
            return self.meta["start"]
        if not self.blocks:
            raise BirError("empty program has no start label")
        return self.blocks[0].label

    def labels(self) -> list:
        return [b.label for b in self.blocks]

    def has_block(self, label: Label) -> bool:
        return label in self._index

    def block(self, label: Label) -> Block:
        try:
            return self.blocks[self._index[label]]
        except KeyError:
            raise BirError(f"no block labelled {label}") from None

    def next_label(self, label: Label) -> Optional[Label]:
        i = self._index[label] + 1
        return self.blocks[i].label if i < len(self.blocks) else None

    def known_label(self, label: Label) -> bool:
        if label in self._index:
            return True
        return any(label in s for s in self.partition.top_sets().values())

    def validate(self) -> None:
        self.partition.validate()
        for b in self.blocks:
            for st in b.stmts:
                targets = []
                if isinstance(st, Jmp):
                    targets = [st.target]
                elif isinstance(st, CJmp):
                    targets = [st.then, st.else_]
                for t in targets:
                    if isinstance(t, Const):
                        lab = label_of(t.value)
                        if not self.known_label(lab):
                            raise BirError(f"jump to unknown label {lab} in block {b.label}")


# -- environment and state ---------------------------------------------

class BirEnv:
    """Immutable variable map; updates return a new environment."""

    __slots__ = ("vars",)

    def __init__(self, vars: Optional[Mapping[str, Any]] = None):
        self.vars: Dict[str, Any] = dict(vars or {})

    def __getitem__(self, name: str):
        try:
            return self.vars[name]
        except KeyError:
            raise BirError(f"unbound variable {name}") from None

    def get(self, name: str, default=None):
        return self.vars.get(name, default)

    def __contains__(self, name: str) -> bool:
        return name in self.vars

    def set(self, **updates) -> "BirEnv":
        d = dict(self.vars)
        d.update(updates)
        return BirEnv(d)

    def update(self, updates: Mapping[str, Any]) -> "BirEnv":
        d = dict(self.vars)
        d.update(updates)
        return BirEnv(d)

    def __eq__(self, other) -> bool:
        return isinstance(other, BirEnv) and self.vars == other.vars

    def __repr__(self) -> str:
        return f"BirEnv({sorted(self.vars)})"


@dataclass(frozen=True)
class BirState:
    env: BirEnv
    pc: Optional[Label]
    status: str = "run"  # run | halt | fail


def fresh_env(tape: Optional[RandomTape] = None) -> BirEnv:
    return BirEnv({
        RM: tape if tape is not None else RandomTape((), 1),
        CTR: word(0, 64),
        HEAP: word(REGION_BASE[MEM], ADDR_WIDTH),
        HEAP_OP: word(REGION_BASE[MEM_OP], ADDR_WIDTH),
        HEAP_A: word(REGION_BASE[MEM_A], ADDR_WIDTH),
        MEM: Memory(),
        MEM_OP: Memory(),
        MEM_A: Memory(),
    })


def label_of(v: Any) -> Label:
    if isinstance(v, LabelVal):
        return v.name
    if isinstance(v, Bits):
        return v.value
    raise BirError(f"{v!r} is not a jump target")


# -- expressions ---------------------------------------------------------

def eval_exp(env: BirEnv, e: BirExp) -> BirVal:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, BinOp):
        a, b = eval_exp(env, e.left), eval_exp(env, e.right)
        if isinstance(a, LabelVal) or isinstance(b, LabelVal):
            if e.op in ("EQ", "NEQ"):
                same = a == b
                return word(int(same if e.op == "EQ" else not same), 1)
            raise BirError(f"{e.op} on label values")
        return apply_binop(e.op, _bits(a), _bits(b))
    if isinstance(e, UnOp):
        return apply_unop(e.op, _bits(eval_exp(env, e.arg)), e.width)
    if isinstance(e, IfThenElse):
        c = _bits(eval_exp(env, e.cond))
        if c.length != 1:
            raise WidthError("ifthenelse selector must be 1 bit")
        return eval_exp(env, e.then if c.value else e.else_)
    if isinstance(e, Load):
        mem = eval_exp(env, e.mem)
        addr = _bits(eval_exp(env, e.addr)).value
        return load_cell(mem, addr, e.width)
    if isinstance(e, Store):
        mem = eval_exp(env, e.mem)
        if not isinstance(mem, Memory):
            raise BirError("store into a non-memory value")
        addr = _bits(eval_exp(env, e.addr)).value
        val = _bits(eval_exp(env, e.value))
        if val.length != e.width:
            raise WidthError(f"store of {val.length} bits with width {e.width}")
        return mem.set(addr, val)
    raise BirError(f"unknown expression {e!r}")


def _bits(v: Any) -> Bits:
    if not isinstance(v, Bits):
        raise BirError(f"expected a word, got {v!r}")
    return v


def region_of(addr: int) -> Optional[str]:
    for name, base in REGION_BASE.items():
        if base <= addr < base + REGION_SIZE:
            return name
    return None


def load_cell(mem: Any, addr: int, width: int) -> Bits:
    if not isinstance(mem, Memory):
        raise BirError("load from a non-memory value")
    if width not in WORD_WIDTHS:
        raise WidthError(f"load width {width}")
    cell = mem.get(addr)
    if cell is None:
        raise BirError(f"load from unwritten address {addr:#x}")
    if cell.length != width:
        raise WidthError(f"load of {width} bits from a {cell.length}-bit cell at {addr:#x}")
    return cell


# -- marshalling ---------------------------------------------------------

def mstore(env: BirEnv, heap_var: str, region: str, b: Bits, chunk: Optional[int] = None) -> Tuple[BirEnv, Bits]:
    """Write a length word and then ``b`` in ``chunk``-bit cells.

    Returns the new environment and the address of the length word, which
    is the heap cursor before the call.
    """
    if chunk is None:
        chunk = chunk_for(b.length)
    if chunk not in WORD_WIDTHS:
        raise WidthError(f"chunk {chunk} is not a word width")
    cells = b.chunks(chunk) if b.length else []
    if len(cells) >> LEN_WIDTH:
        raise WidthError("chunk count does not fit in the length word")
    start = env[heap_var].value
    end = start + 1 + len(cells)
    base = REGION_BASE[region]
    if not (base <= start and end <= base + REGION_SIZE):
        raise BirError(f"region {region} exhausted")
    mem: Memory = env[region]
    items = [(start, Bits(len(cells), LEN_WIDTH))]
    items += [(start + 1 + i, c) for i, c in enumerate(cells)]
    env2 = env.update({region: mem.set_many(items), heap_var: word(end, ADDR_WIDTH)})
    return env2, word(start, ADDR_WIDTH)


def mload(env: BirEnv, addr: Union[Bits, int]) -> Bits:
    """Concatenate the cells following the length word at ``addr``."""
    a = addr.value if isinstance(addr, Bits) else addr
    region = region_of(a)
    if region is None:
        raise BirError(f"mload outside every region: {a:#x}")
    mem: Memory = env[region]
    head = mem.get(a)
    if head is None:
        raise BirError(f"mload of unwritten address {a:#x}")
    count = head.value
    if head.length != LEN_WIDTH or count > REGION_SIZE:
        raise BirError(f"implausible length word at {a:#x}")
    parts = []
    for i in range(1, count + 1):
        c = mem.get(a + i)
        if c is None:
            raise BirError(f"mload past written data at {a + i:#x}")
        parts.append(c)
    return Bits.concat_all(parts)


def rng_read(env: BirEnv, n: int) -> Tuple[Bits, BirEnv, int]:
    """Read the next n bits of the tape; returns (value, env, fresh index)."""
    tape: RandomTape = env[RM]
    if n % tape.w:
        raise WidthError(f"n={n} is not a multiple of the tape word width {tape.w}")
    l = n // tape.w
    ctr = env[CTR].value
    if ctr + l > len(tape.words):
        raise TapeExhausted(f"random tape exhausted after {ctr} words")
    x = Bits.concat_all(tape.words[ctr:ctr + l])
    index = ctr // l + 1
    return x, env.set(**{CTR: word(ctr + l, 64)}), index


# -- channels ------------------------------------------------------------

class ChannelBank:
    """FIFO queue per (channel, ids) pair; immutable."""

    __slots__ = ("queues",)

    def __init__(self, queues: Optional[Mapping[tuple, Tuple[Bits, ...]]] = None):
        self.queues = dict(queues or {})

    def enqueue(self, key: tuple, msg: Bits) -> "ChannelBank":
        q = dict(self.queues)
        q[key] = self.queues.get(key, ()) + (msg,)
        return ChannelBank(q)

    def dequeue(self, key: tuple) -> Tuple[Optional[Bits], "ChannelBank"]:
        items = self.queues.get(key, ())
        if not items:
            return None, self
        q = dict(self.queues)
        q[key] = items[1:]
        return items[0], ChannelBank(q)

    def pending(self, key: tuple) -> int:
        return len(self.queues.get(key, ()))


# -- stepping ------------------------------------------------------------

@dataclass
class BirConfig:
    """Run-time parameters shared by every step of one execution."""

    registry: OpRegistry = field(default_factory=default_registry)
    n: int = 4  # bits per RNG call


def return_site(env: BirEnv) -> Label:
    ret = env.get(LR)
    if ret is None:
        raise BirError("call without a recorded return site (LR unset)")
    return label_of(ret)


def channel_key(p: BirProgram, label: Label, env: BirEnv) -> Tuple[str, Tuple[Bits, ...]]:
    spec = p.partition.channels.get(label, ChannelSpec())
    ids = tuple(_bits(eval_exp(env, e)) for e in spec.ids)
    return spec.chan, ids


def load_args(env: BirEnv, m: int) -> Tuple[Bits, ...]:
    return tuple(mload(env, env[f"R{i}"]) for i in range(1, m + 1))


def bir_step(p: BirProgram, s: BirState, chans: Optional[ChannelBank] = None,
             cfg: Optional[BirConfig] = None):
    """One small step: a whole normal block, or one atomic special call."""
    cfg = cfg or BirConfig()
    chans = chans if chans is not None else ChannelBank()
    if s.status != "run":
        raise BirError(f"state is {s.status}")
    env, pc = s.env, s.pc
    kind, detail = p.partition.classify(pc)
    if kind != "normal" and not p.partition.is_entry(kind, pc):
        raise BirError(f"call into {pc} bypasses its entry point")
    if kind == "rng":
        x, env1, idx = rng_read(env, cfg.n)
        env2, a = mstore(env1, HEAP, MEM, x)
        return BirState(env2.set(R0=a), return_site(env)), Fresh(x, idx), chans
    if kind == "op":
        try:
            arity = cfg.registry.arity(detail)
        except UnknownOp:
            raise BirError(f"unknown op {detail}") from None
        v = cfg.registry.apply(detail, load_args(env, arity))
        if v is None:
            raise BirError(f"op {detail} undefined on its arguments")
        env2, a = mstore(env, HEAP_OP, MEM_OP, v)
        return BirState(env2.set(R0=a), return_site(env)), Crypto(v, detail), chans
    if kind == "event":
        args = load_args(env, p.partition.event_arity.get(detail, 0))
        return BirState(env, return_site(env)), Ev(detail, args), chans
    if kind == "send":
        msg = mload(env, env["R0"])
        chan, ids = channel_key(p, pc, env)
        return BirState(env, return_site(env)), Out(msg, chan, ids), chans.enqueue((chan, ids), msg)
    if kind == "recv":
        chan, ids = channel_key(p, pc, env)
        msg, chans2 = chans.dequeue((chan, ids))
        if msg is None:
            raise Blocked(f"receive on empty channel {chan}{list(ids)}")
        return receive(p, s, msg, chan, ids) + (chans2,)
    return exec_block(p, s) + (chans,)


def receive(p: BirProgram, s: BirState, msg: Bits, chan: str, ids) -> Tuple[BirState, In]:
    env2, a = mstore(s.env, HEAP_A, MEM_A, msg)
    return BirState(env2.set(R0=a), return_site(s.env)), In(msg, chan, tuple(ids))


def exec_block(p: BirProgram, s: BirState) -> Tuple[BirState, Any]:
    env = s.env
    block = p.block(s.pc)
    for st in block.stmts:
        if isinstance(st, Assign):
            env = env.set(**{st.var: eval_exp(env, st.exp)})
        elif isinstance(st, Assert):
            c = _bits(eval_exp(env, st.exp))
            if not c.value:
                return BirState(env, s.pc, "fail"), Fail("assert")
        elif isinstance(st, Halt):
            return BirState(env, s.pc, "halt"), TAU
        elif isinstance(st, Jmp):
            return BirState(env, label_of(eval_exp(env, st.target))), TAU
        elif isinstance(st, CJmp):
            c = _bits(eval_exp(env, st.cond))
            if c.length != 1:
                raise WidthError("cjmp condition must be 1 bit")
            tgt = st.then if c.value else st.else_
            return BirState(env, label_of(eval_exp(env, tgt))), TAU
        else:
            raise BirError(f"unknown statement {st!r}")
    nxt = p.next_label(s.pc)
    if nxt is None:
        raise BirError(f"block {s.pc} falls off the end of the program")
    return BirState(env, nxt), TAU


# -- initial states and whole runs ---------------------------------------

def initial_state(p: BirProgram, entry: Label, args: Sequence[Bits] = (),
                  tape: Optional[RandomTape] = None, env: Optional[BirEnv] = None) -> BirState:
    """Start state at ``entry``; arguments are marshalled into R0..R(m-1)."""
    env = env if env is not None else fresh_env(tape)
    if tape is not None:
        env = env.set(**{RM: tape, CTR: word(0, 64)})
    regs = {}
    for i, b in enumerate(args):
        env, a = mstore(env, HEAP, MEM, b)
        regs[f"R{i}"] = a
    return BirState(env.update(regs), entry)


@dataclass
class BirTrace:
    events: list
    states: list
    status: str
    error: Optional[str] = None

    def observable(self) -> list:
        return [e for e in self.events if not isinstance(e, Tau)]


Driver = Callable[[str, Tuple[Bits, ...], list], Optional[Bits]]


def run_concrete(p: BirProgram, s0: BirState, tape: Optional[RandomTape] = None,
                 driver: Optional[Union[Driver, Mapping[str, Sequence[Bits]]]] = None,
                 max_steps: int = 10_000, cfg: Optional[BirConfig] = None) -> BirTrace:
    """Run to halt, failure, error or the step bound.

    ``driver`` supplies messages when a receive blocks: either a callable
    ``(chan, ids, events) -> Bits | None`` or a map from channel name to a
    list of messages consumed in order.
    """
    if tape is not None:
        s0 = BirState(s0.env.set(**{RM: tape, CTR: word(0, 64)}), s0.pc, s0.status)
    if isinstance(driver, Mapping):
        scripted = {k: list(v) for k, v in driver.items()}

        def driver_fn(chan, ids, events):
            q = scripted.get(chan, [])
            return q.pop(0) if q else None
        drive = driver_fn
    else:
        drive = driver
    chans = ChannelBank()
    s = s0
    events, states = [], [s0]
    for _ in range(max_steps):
        if s.status != "run":
            return BirTrace(events, states, s.status)
        try:
            s2, ev, chans = bir_step(p, s, chans, cfg)
        except Blocked as exc:
            chan, ids = channel_key(p, s.pc, s.env)
            msg = drive(chan, ids, events) if drive else None
            if msg is None:
                return BirTrace(events, states, "blocked", str(exc))
            chans = chans.enqueue((chan, ids), msg)
            continue
        except BirError as exc:
            return BirTrace(events, states, "error", str(exc))
        except WidthError as exc:
            return BirTrace(events, states, "error", str(exc))
        events.append(ev)
        states.append(s2)
        s = s2
    if s.status != "run":
        return BirTrace(events, states, s.status)
    return BirTrace(events, states, "bound")
