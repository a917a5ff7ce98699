"""Text format for BIR programs and their label partition.

Programs are line oriented::

    block entry:
      R1 := 3:8 + x        # value:width constants
      call enc, after      # LR := @after; jmp @enc
    block after:
      cjmp R0 == 0:64, @done, @entry
    block done:
      halt
    ---
    {"ops": {"enc": ["enc"]}}

The optional JSON after ``---`` (or a separate file) describes the
partition; see ``partition_from_config`` for the keys.
"""

from __future__ import annotations

import json
import re
from typing import Any, Dict, List, Optional, Tuple

from .bits import Bits, WidthError, binop_width, word, WORD_WIDTHS
from .bir import (
    Assert, Assign, BinOp, BirError, BirExp, BirProgram, Block, CJmp, ChannelSpec,
    Const, Halt, IfThenElse, Jmp, LabelPartition, LabelVal, Load, LR, Store, UnOp, Var,
)


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}")
        self.msg, self.line, self.col = msg, line, col


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>0x[0-9a-fA-F]+|\d+)
  | (?P<label>@[A-Za-z_0-9.]+)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9.]*)
  | (?P<op>:=|==|!=|<=|<<|>>|[-+*/%&|^~<:(),])
""", re.VERBOSE)

# lowest precedence first
_LEVELS = [
    {"|": "OR"},
    {"^": "XOR"},
    {"&": "AND"},
    {"==": "EQ", "!=": "NEQ"},
    {"<": "LT", "<=": "LE"},
    {"<<": "LSL", ">>": "LSR"},
    {"+": "PLUS", "-": "MINUS"},
    {"*": "MULT", "/": "DIV", "%": "MOD"},
]
SYMBOL_OF = {op: sym for level in _LEVELS for sym, op in level.items()}
_PREC = {op: i for i, level in enumerate(_LEVELS) for op in level.values()}


def _tokenize(text: str, line: int, col0: int = 1) -> List[Tuple[str, str, int]]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col0 + pos)
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group(), col0 + pos))
        pos = m.end()
    return out


def parse_label(s: str):
    return int(s, 0) if re.fullmatch(r"0x[0-9a-fA-F]+|\d+", s) else s


class _ExpParser:
    def __init__(self, toks, line: int):
        self.toks, self.i, self.line = toks, 0, line

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, self._endcol())

    def _endcol(self) -> int:
        if not self.toks:
            return 1
        _, text, col = self.toks[-1]
        return col + len(text)

    def next(self):
        t = self.peek()
        if t[0] is None:
            raise ParseError("unexpected end of line", self.line, t[2])
        self.i += 1
        return t

    def expect(self, text: str):
        t = self.next()
        if t[1] != text:
            raise ParseError(f"expected {text!r}, found {t[1]!r}", self.line, t[2])
        return t

    def done(self) -> bool:
        return self.i >= len(self.toks)

    def exp(self, level: int = 0) -> BirExp:
        if level == len(_LEVELS):
            return self.unary()
        left = self.exp(level + 1)
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in _LEVELS[level]:
                self.next()
                right = self.exp(level + 1)
                left = BinOp(_LEVELS[level][text], left, right)
            else:
                return left

    def unary(self) -> BirExp:
        kind, text, _ = self.peek()
        if kind == "op" and text == "~":
            self.next()
            return UnOp("NOT", self.unary())
        if kind == "op" and text == "-":
            self.next()
            return UnOp("NEG", self.unary())
        return self.primary()

    def _int(self) -> int:
        kind, text, col = self.next()
        if kind != "num":
            raise ParseError(f"expected a number, found {text!r}", self.line, col)
        return int(text, 0)

    def primary(self) -> BirExp:
        kind, text, col = self.next()
        if kind == "num":
            self.expect(":")
            width = self._int()
            _check_width(width, self.line, col)
            value = int(text, 0)
            if value >> width:
                raise ParseError(f"constant {text} does not fit in {width} bits", self.line, col)
            return Const(word(value, width))
        if kind == "label":
            return Const(LabelVal(parse_label(text[1:])))
        if kind == "op" and text == "(":
            e = self.exp()
            self.expect(")")
            return e
        if kind == "ident":
            if self.peek()[1] == "(":
                return self.call(text, col)
            return Var(text)
        raise ParseError(f"unexpected token {text!r}", self.line, col)

    def call(self, name: str, col: int) -> BirExp:
        self.expect("(")
        if name == "ite":
            c = self.exp(); self.expect(",")
            a = self.exp(); self.expect(",")
            b = self.exp(); self.expect(")")
            return IfThenElse(c, a, b)
        if name == "load":
            m = self.exp(); self.expect(",")
            a = self.exp(); self.expect(",")
            w = self._int(); self.expect(")")
            _check_width(w, self.line, col)
            return Load(m, a, w)
        if name == "store":
            m = self.exp(); self.expect(",")
            a = self.exp(); self.expect(",")
            v = self.exp(); self.expect(",")
            w = self._int(); self.expect(")")
            _check_width(w, self.line, col)
            return Store(m, a, v, w)
        if name == "cast":
            e = self.exp(); self.expect(",")
            w = self._int(); self.expect(")")
            _check_width(w, self.line, col)
            return UnOp("CAST", e, w)
        raise ParseError(f"unknown function {name!r}", self.line, col)


def _check_width(w: int, line: int, col: int) -> None:
    if w not in WORD_WIDTHS:
        raise ParseError(f"width {w} is not one of {WORD_WIDTHS}", line, col)


def parse_exp(text: str, line: int = 1) -> BirExp:
    p = _ExpParser(_tokenize(text, line), line)
    e = p.exp()
    if not p.done():
        _, tok, col = p.peek()
        raise ParseError(f"trailing input {tok!r}", line, col)
    return e


# -- width checking -----------------------------------------------------

def static_width(e: BirExp, widths: Dict[str, int], line: int = 0) -> Optional[int]:
    """Width of ``e`` when determinable; raises on a detectable mismatch."""
    try:
        return _width(e, widths)
    except WidthError as exc:
        raise ParseError(str(exc), line, 1) from None


def _width(e: BirExp, widths: Dict[str, int]) -> Optional[int]:
    if isinstance(e, Const):
        return e.value.length if isinstance(e.value, Bits) else None
    if isinstance(e, Var):
        return widths.get(e.name)
    if isinstance(e, BinOp):
        return binop_width(e.op, _width(e.left, widths), _width(e.right, widths))
    if isinstance(e, UnOp):
        w = _width(e.arg, widths)
        return e.width if e.op == "CAST" else w
    if isinstance(e, IfThenElse):
        c = _width(e.cond, widths)
        if c not in (None, 1):
            raise WidthError("ifthenelse selector must be 1 bit")
        return binop_width("ITE", _width(e.then, widths), _width(e.else_, widths))
    if isinstance(e, Load):
        _width(e.addr, widths)
        return e.width
    if isinstance(e, Store):
        v = _width(e.value, widths)
        if v is not None and v != e.width:
            raise WidthError(f"store of a {v}-bit value with width {e.width}")
        return None
    return None


# -- statements and programs --------------------------------------------

_BLOCK = re.compile(r"block\s+([A-Za-z_0-9.]+)\s*:\s*$")


def _split_args(p: _ExpParser, n: int) -> List[BirExp]:
    out = [p.exp()]
    for _ in range(n - 1):
        p.expect(",")
        out.append(p.exp())
    if not p.done():
        _, tok, col = p.peek()
        raise ParseError(f"trailing input {tok!r}", p.line, col)
    return out


def _parse_stmt(body: str, line: int, col0: int) -> List[Any]:
    toks = _tokenize(body, line, col0)
    kind, head, col = toks[0]
    rest = _ExpParser(toks[1:], line)
    if len(toks) > 1 and toks[1][1] == ":=":
        if kind != "ident":
            raise ParseError(f"cannot assign to {head!r}", line, col)
        e = _ExpParser(toks[2:], line)
        return [Assign(head, _split_args(e, 1)[0])]
    if kind != "ident":
        raise ParseError(f"unexpected {head!r}", line, col)
    if head == "halt":
        if toks[1:]:
            raise ParseError("halt takes no operand", line, toks[1][2])
        return [Halt()]
    if head == "assert":
        return [Assert(*_split_args(rest, 1))]
    if head == "jmp":
        return [Jmp(*_split_args(rest, 1))]
    if head == "cjmp":
        return [CJmp(*_split_args(rest, 3))]
    if head == "call":
        target, ret = _split_args(rest, 2)
        return [Assign(LR, _as_label(ret, line, col)), Jmp(_as_label(target, line, col))]
    raise ParseError(f"unknown statement {head!r}", line, col)


def _as_label(e: BirExp, line: int, col: int) -> BirExp:
    if isinstance(e, Var):
        return Const(LabelVal(parse_label(e.name)))
    if isinstance(e, Const) and isinstance(e.value, LabelVal):
        return e
    if isinstance(e, Const) and isinstance(e.value, Bits):
        return Const(LabelVal(e.value.value))
    raise ParseError("call operands must be labels", line, col)


def _strip_comment(raw: str) -> str:
    i = raw.find("#")
    return raw if i < 0 else raw[:i]


def parse_program(text: str, config: Optional[Dict[str, Any]] = None, name: str = "prog") -> BirProgram:
    """Parse BIR source plus an optional partition config (inline or given)."""
    lines = text.split("\n")
    inline_cfg = None
    for i, raw in enumerate(lines):
        if raw.strip() == "---":
            cfg_text = "\n".join(lines[i + 1:])
            try:
                inline_cfg = json.loads(cfg_text) if cfg_text.strip() else {}
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad config: {exc.msg}", i + 1 + exc.lineno, exc.colno) from None
            lines = lines[:i]
            break
    cfg = dict(inline_cfg or {})
    cfg.update(config or {})

    blocks: List[Block] = []
    seen: Dict[Any, int] = {}
    cur_label, cur_stmts = None, []
    widths: Dict[str, int] = {}

    def close():
        if cur_label is not None:
            blocks.append(Block(cur_label, tuple(cur_stmts)))

    for ln, raw in enumerate(lines, 1):
        body = _strip_comment(raw)
        if not body.strip():
            continue
        col0 = len(body) - len(body.lstrip()) + 1
        stripped = body.strip()
        m = _BLOCK.match(stripped)
        if m:
            close()
            cur_label = parse_label(m.group(1))
            if cur_label in seen:
                raise ParseError(f"duplicate label {cur_label} (first at line {seen[cur_label]})", ln, col0)
            seen[cur_label] = ln
            cur_stmts = []
            continue
        if cur_label is None:
            raise ParseError("statement outside a block", ln, col0)
        if cur_stmts and isinstance(cur_stmts[-1], (Halt, Jmp, CJmp)):
            raise ParseError("statement after the end of a block", ln, col0)
        for st in _parse_stmt(stripped, ln, col0):
            _check_stmt(st, widths, ln)
            cur_stmts.append(st)
    close()

    part = partition_from_config(cfg, [b.label for b in blocks])
    meta = {k: cfg[k] for k in ("start", "n", "w") if k in cfg}
    if "start" in meta:
        meta["start"] = parse_label(str(meta["start"]))
    try:
        prog = BirProgram(tuple(blocks), part, name, meta)
        prog.validate()
    except BirError as exc:
        raise ParseError(str(exc), 0, 0) from None
    return prog


def _check_stmt(st, widths: Dict[str, int], line: int) -> None:
    if isinstance(st, Assign):
        w = static_width(st.exp, widths, line)
        if w is not None:
            old = widths.get(st.var)
            if old is not None and old != w:
                raise ParseError(f"{st.var} assigned {w} bits, earlier {old}", line, 1)
            widths[st.var] = w
    elif isinstance(st, Assert):
        if static_width(st.exp, widths, line) not in (None, 1):
            raise ParseError("assert needs a 1-bit condition", line, 1)
    elif isinstance(st, CJmp):
        if static_width(st.cond, widths, line) not in (None, 1):
            raise ParseError("cjmp needs a 1-bit condition", line, 1)
        static_width(st.then, widths, line)
        static_width(st.else_, widths, line)
    elif isinstance(st, Jmp):
        static_width(st.target, widths, line)


def _labels(xs) -> frozenset:
    return frozenset(parse_label(str(x)) for x in xs)


def partition_from_config(cfg: Dict[str, Any], block_labels: List[Any]) -> LabelPartition:
    """Build a partition.

    Keys: ``ops`` (name to labels), ``rng``, ``attacker_send``,
    ``attacker_recv``, ``events`` (name to labels), ``loops`` (entry to
    exit), ``entries`` (set name to labels), ``event_arity``, ``channels``
    (label to ``{"chan", "ids"}`` with id expressions as text),
    ``recv_width`` (label to bits) and ``params`` (label to
    ``[[name, width], ...]``).  A bare op or event name with no label list
    uses the name itself as its label.
    """
    def named_sets(key):
        raw = cfg.get(key, {})
        if isinstance(raw, list):
            raw = {name: [name] for name in raw}
        return {name: _labels(labs if isinstance(labs, list) else [labs]) for name, labs in raw.items()}

    ops = named_sets("ops")
    events = named_sets("events")
    loops = {parse_label(str(k)): parse_label(str(v)) for k, v in cfg.get("loops", {}).items()}
    channels = {}
    for lab, spec in cfg.get("channels", {}).items():
        ids = tuple(parse_exp(t) for t in spec.get("ids", []))
        channels[parse_label(str(lab))] = ChannelSpec(spec.get("chan", "c"), ids)
    part = LabelPartition(
        normal=frozenset(block_labels),
        ops=ops,
        attacker_send=_labels(cfg.get("attacker_send", [])),
        attacker_recv=_labels(cfg.get("attacker_recv", [])),
        rng=_labels(cfg.get("rng", [])),
        events=events,
        loops=frozenset(loops),
        entries={k: _labels(v) for k, v in cfg.get("entries", {}).items()},
        exits=loops,
        event_arity={k: int(v) for k, v in cfg.get("event_arity", {}).items()},
        channels=channels,
        recv_width={parse_label(str(k)): int(v) for k, v in cfg.get("recv_width", {}).items()},
        params={parse_label(str(k)): tuple((n, int(w)) for n, w in v) for k, v in cfg.get("params", {}).items()},
    )
    return part


def load_program(path: str, config_path: Optional[str] = None) -> BirProgram:
    with open(path) as fh:
        text = fh.read()
    cfg = None
    if config_path:
        with open(config_path) as fh:
            cfg = json.load(fh)
    name = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return parse_program(text, cfg, name)


# -- printing -----------------------------------------------------------

def format_exp(e: BirExp, prec: int = -1) -> str:
    if isinstance(e, Const):
        v = e.value
        return f"@{v.name}" if isinstance(v, LabelVal) else f"{v.value}:{v.length}"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        s = f"{format_exp(e.left, p)} {SYMBOL_OF[e.op]} {format_exp(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    if isinstance(e, UnOp):
        if e.op == "CAST":
            return f"cast({format_exp(e.arg)}, {e.width})"
        sym = "~" if e.op == "NOT" else "-"
        return f"{sym}{format_exp(e.arg, len(_LEVELS))}"
    if isinstance(e, IfThenElse):
        return f"ite({format_exp(e.cond)}, {format_exp(e.then)}, {format_exp(e.else_)})"
    if isinstance(e, Load):
        return f"load({format_exp(e.mem)}, {format_exp(e.addr)}, {e.width})"
    if isinstance(e, Store):
        return f"store({format_exp(e.mem)}, {format_exp(e.addr)}, {format_exp(e.value)}, {e.width})"
    raise TypeError(e)


def format_stmt(st) -> str:
    if isinstance(st, Assign):
        return f"{st.var} := {format_exp(st.exp)}"
    if isinstance(st, Assert):
        return f"assert {format_exp(st.exp)}"
    if isinstance(st, Halt):
        return "halt"
    if isinstance(st, Jmp):
        return f"jmp {format_exp(st.target)}"
    if isinstance(st, CJmp):
        return f"cjmp {format_exp(st.cond)}, {format_exp(st.then)}, {format_exp(st.else_)}"
    raise TypeError(st)


def partition_to_config(part: LabelPartition, meta: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    def srt(xs):
        return sorted(xs, key=lambda x: (isinstance(x, str), str(x)))

    cfg: Dict[str, Any] = {}
    if part.ops:
        cfg["ops"] = {k: srt(v) for k, v in sorted(part.ops.items())}
    for key in ("rng", "attacker_send", "attacker_recv"):
        if getattr(part, key):
            cfg[key] = srt(getattr(part, key))
    if part.events:
        cfg["events"] = {k: srt(v) for k, v in sorted(part.events.items())}
    if part.exits:
        cfg["loops"] = {str(k): v for k, v in part.exits.items()}
    if part.entries:
        cfg["entries"] = {k: srt(v) for k, v in sorted(part.entries.items())}
    if part.event_arity:
        cfg["event_arity"] = dict(sorted(part.event_arity.items()))
    if part.channels:
        cfg["channels"] = {str(k): {"chan": v.chan, "ids": [format_exp(e) for e in v.ids]}
                           for k, v in part.channels.items()}
    if part.recv_width:
        cfg["recv_width"] = {str(k): v for k, v in part.recv_width.items()}
    if part.params:
        cfg["params"] = {str(k): [list(x) for x in v] for k, v in part.params.items()}
    for k, v in (meta or {}).items():
        cfg[k] = v
    return cfg


def format_program(p: BirProgram) -> str:
    """Canonical text: one statement per line, call sugar expanded."""
    out = []
    for b in p.blocks:
        out.append(f"block {b.label}:")
        out.extend(f"  {format_stmt(st)}" for st in b.stmts)
    cfg = partition_to_config(p.partition, p.meta)
    if cfg:
        out.append("---")
        out.append(json.dumps(cfg, indent=1, sort_keys=True))
    return "\n".join(out) + "\n"
