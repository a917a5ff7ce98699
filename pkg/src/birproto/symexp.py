"""Symbolic expressions, simplifying constructors and interpretations.

Expressions are immutable trees.  Build them through the ``mk_*``
constructors, which fold constants and apply a few local identities so
that evaluation of a ground expression always collapses to ``SConst``.

Symbols come in two flavours.  Primitive symbols (program parameters,
random tape words, received messages, loop counters) receive a value
directly.  Defined symbols (RNG results, library results, event
arguments) carry a definition in ``Interpretation.defs``; their value is
the interpretation of that definition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

from .bits import Bits, WidthError, apply_binop, apply_unop, binop_width
from .bir import LabelVal
from .ops import OpRegistry, default_registry


class SymExp:
    width: Optional[int]


@dataclass(frozen=True)
class SConst(SymExp):
    value: Union[Bits, LabelVal]

    @property
    def width(self):
        return self.value.length if isinstance(self.value, Bits) else None


@dataclass(frozen=True)
class SVar(SymExp):
    name: str
    width: Optional[int]


@dataclass(frozen=True)
class SUn(SymExp):
    op: str
    arg: SymExp
    width: Optional[int]


@dataclass(frozen=True)
class SBin(SymExp):
    op: str
    left: SymExp
    right: SymExp
    width: Optional[int]


@dataclass(frozen=True)
class SIte(SymExp):
    cond: SymExp
    then: SymExp
    else_: SymExp
    width: Optional[int]


@dataclass(frozen=True)
class SApp(SymExp):
    fn: str
    args: Tuple[SymExp, ...]
    width: Optional[int]


@dataclass(frozen=True)
class SSlice(SymExp):
    arg: SymExp
    lo: int
    width: int


@dataclass(frozen=True)
class SConcat(SymExp):
    parts: Tuple[SymExp, ...]
    width: Optional[int]


@dataclass(frozen=True)
class SLoad(SymExp):
    """Read of a memory snapshot at a symbolic address."""

    cells: Tuple[Tuple[int, SymExp], ...]
    addr: SymExp
    width: int


@dataclass(frozen=True)
class SIndexed(SymExp):
    """Member ``index`` of a per-iteration family; member 0 is ``init``."""

    family: str
    index: SymExp
    init: SymExp
    width: Optional[int]


@dataclass(frozen=True)
class SForall(SymExp):
    """Conjunction of ``body`` over ``var`` in ``lo..hi`` (inclusive)."""

    var: str
    lo: int
    hi: SymExp
    body: SymExp
    var_width: int = 8

    @property
    def width(self):
        return 1


TRUE = SConst(Bits(1, 1))
FALSE = SConst(Bits(0, 1))


def const(value: int, width: int) -> SConst:
    return SConst(Bits(value & ((1 << width) - 1), width))


def is_const(e: SymExp) -> bool:
    return isinstance(e, SConst)


def _all_ones(e: SConst) -> bool:
    return isinstance(e.value, Bits) and e.value.value == (1 << e.value.length) - 1


def _zero(e: SConst) -> bool:
    return isinstance(e.value, Bits) and e.value.value == 0


# -- smart constructors --------------------------------------------------

def mk_bin(op: str, a: SymExp, b: SymExp) -> SymExp:
    if isinstance(a, SConst) and isinstance(b, SConst):
        va, vb = a.value, b.value
        if isinstance(va, LabelVal) or isinstance(vb, LabelVal):
            if op in ("EQ", "NEQ"):
                same = va == vb
                return TRUE if same == (op == "EQ") else FALSE
            raise WidthError(f"{op} on label values")
        return SConst(apply_binop(op, va, vb))
    w = binop_width(op, a.width, b.width)
    if a == b:
        if op in ("EQ", "LE"):
            return TRUE
        if op in ("NEQ", "LT"):
            return FALSE
        if op in ("AND", "OR"):
            return a
        if op in ("XOR", "MINUS") and w is not None:
            return const(0, w)
    # put constants on the right for commutative operators
    if isinstance(a, SConst) and op in ("AND", "OR", "XOR", "PLUS", "MULT", "EQ", "NEQ"):
        a, b = b, a
    if isinstance(b, SConst) and isinstance(b.value, Bits):
        if _zero(b):
            if op in ("PLUS", "MINUS", "OR", "XOR", "LSL", "LSR"):
                return a
            if op in ("AND", "MULT"):
                return b
        if _all_ones(b):
            if op == "AND":
                return a
            if op == "OR":
                return b
        if op in ("MULT", "DIV") and b.value.value == 1:
            return a
        if a.width == 1 and op == "EQ":
            return a if b.value.value else mk_un("NOT", a)
        if a.width == 1 and op == "NEQ":
            return mk_un("NOT", a) if b.value.value else a
        if op == "PLUS" and isinstance(a, SBin) and a.op == "PLUS" and isinstance(a.right, SConst):
            return mk_bin("PLUS", a.left, mk_bin("PLUS", a.right, b))
    return SBin(op, a, b, w)


def mk_un(op: str, a: SymExp, width: Optional[int] = None) -> SymExp:
    if isinstance(a, SConst):
        return SConst(apply_unop(op, a.value, width))
    if op == "NOT" and isinstance(a, SUn) and a.op == "NOT":
        return a.arg
    if op == "CAST":
        if width == a.width:
            return a
        return SUn(op, a, width)
    return SUn(op, a, a.width)


def mk_ite(c: SymExp, a: SymExp, b: SymExp) -> SymExp:
    if isinstance(c, SConst):
        return a if c.value.value else b
    if a == b:
        return a
    if a == TRUE and b == FALSE:
        return c
    if a == FALSE and b == TRUE:
        return mk_un("NOT", c)
    w = a.width if a.width is not None else b.width
    return SIte(c, a, b, w)


def mk_and(*xs: SymExp) -> SymExp:
    out = TRUE
    for x in xs:
        out = mk_bin("AND", out, x) if out != TRUE else x
        if out == FALSE:
            return FALSE
    return out


def mk_not(x: SymExp) -> SymExp:
    return mk_un("NOT", x)


def mk_app(fn: str, args: Iterable[SymExp], registry: Optional[OpRegistry] = None) -> SymExp:
    args = tuple(args)
    reg = registry or _DEFAULT_REG
    width = reg.result_width(fn, [a.width for a in args]) if fn in reg else None
    return SApp(fn, args, width)


def mk_slice(x: SymExp, lo: int, width: int) -> SymExp:
    if x.width is not None and (lo < 0 or lo + width > x.width):
        raise WidthError(f"slice [{lo}:{lo + width}] of a {x.width}-bit expression")
    if lo == 0 and width == x.width:
        return x
    if isinstance(x, SConst):
        return SConst(x.value.slice(lo, width))
    if isinstance(x, SSlice):
        return mk_slice(x.arg, x.lo + lo, width)
    if isinstance(x, SConcat):
        off = 0
        for p in x.parts:
            if p.width is None:
                break
            if off <= lo and lo + width <= off + p.width:
                return mk_slice(p, lo - off, width)
            off += p.width
    return SSlice(x, lo, width)


def mk_concat(parts: Iterable[SymExp]) -> SymExp:
    flat = []
    for p in parts:
        if isinstance(p, SConcat):
            flat.extend(p.parts)
        elif p.width != 0:
            flat.append(p)
    merged = []
    for p in flat:
        if merged:
            q = merged[-1]
            if isinstance(q, SConst) and isinstance(p, SConst):
                merged[-1] = SConst(q.value.concat(p.value))
                continue
            if isinstance(q, SSlice) and isinstance(p, SSlice) and q.arg == p.arg and q.lo + q.width == p.lo:
                merged[-1] = mk_slice(q.arg, q.lo, q.width + p.width)
                continue
        merged.append(p)
    if not merged:
        return SConst(Bits.empty())
    if len(merged) == 1:
        return merged[0]
    widths = [p.width for p in merged]
    return SConcat(tuple(merged), None if None in widths else sum(widths))


def mk_load(cells: Mapping[int, SymExp], addr: SymExp, width: int) -> SymExp:
    if isinstance(addr, SConst):
        cell = cells.get(addr.value.value)
        if cell is None:
            raise KeyError(f"load from unwritten address {addr.value.value:#x}")
        if cell.width is not None and cell.width != width:
            raise WidthError(f"load of {width} bits from a {cell.width}-bit cell")
        return cell
    return SLoad(tuple(sorted(cells.items())), addr, width)


def mk_indexed(family: str, index: SymExp, init: SymExp, width: Optional[int]) -> SymExp:
    if isinstance(index, SConst) and index.value.value == 0:
        return init
    return SIndexed(family, index, init, width)


def mk_forall(var: str, lo: int, hi: SymExp, body: SymExp, var_width: int = 8) -> SymExp:
    if body == TRUE:
        return TRUE
    if isinstance(hi, SConst):
        return expand_forall(var, lo, hi.value.value, body, var_width)
    return SForall(var, lo, hi, body, var_width)


def expand_forall(var: str, lo: int, hi: int, body: SymExp, var_width: int = 8) -> SymExp:
    out = TRUE
    for i in range(lo, hi + 1):
        out = mk_and(out, substitute(body, {var: const(i, var_width)}))
    return out


_DEFAULT_REG = default_registry()


# -- traversal -----------------------------------------------------------

def children(e: SymExp) -> Tuple[SymExp, ...]:
    if isinstance(e, SUn):
        return (e.arg,)
    if isinstance(e, SBin):
        return (e.left, e.right)
    if isinstance(e, SIte):
        return (e.cond, e.then, e.else_)
    if isinstance(e, SApp):
        return e.args
    if isinstance(e, SSlice):
        return (e.arg,)
    if isinstance(e, SConcat):
        return e.parts
    if isinstance(e, SLoad):
        return tuple(v for _, v in e.cells) + (e.addr,)
    if isinstance(e, SIndexed):
        return (e.index, e.init)
    if isinstance(e, SForall):
        return (e.hi, e.body)
    return ()


def symbols(e: SymExp, acc: Optional[Dict[str, Optional[int]]] = None) -> Dict[str, Optional[int]]:
    """Names and widths of the SVar leaves of ``e`` (bound variables included)."""
    acc = {} if acc is None else acc
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, SVar):
            acc[x.name] = x.width
        else:
            stack.extend(children(x))
    return acc


def families(e: SymExp, acc: Optional[set] = None) -> set:
    acc = set() if acc is None else acc
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, SIndexed):
            acc.add((x.family, x.width))
        stack.extend(children(x))
    return acc


def substitute(e: SymExp, sub: Mapping[str, SymExp]) -> SymExp:
    """Replace free symbols by expressions and re-simplify."""
    if isinstance(e, SVar):
        return sub.get(e.name, e)
    if isinstance(e, SConst):
        return e
    if isinstance(e, SUn):
        return mk_un(e.op, substitute(e.arg, sub), e.width if e.op == "CAST" else None)
    if isinstance(e, SBin):
        return mk_bin(e.op, substitute(e.left, sub), substitute(e.right, sub))
    if isinstance(e, SIte):
        return mk_ite(substitute(e.cond, sub), substitute(e.then, sub), substitute(e.else_, sub))
    if isinstance(e, SApp):
        return SApp(e.fn, tuple(substitute(a, sub) for a in e.args), e.width)
    if isinstance(e, SSlice):
        return mk_slice(substitute(e.arg, sub), e.lo, e.width)
    if isinstance(e, SConcat):
        return mk_concat(substitute(p, sub) for p in e.parts)
    if isinstance(e, SLoad):
        cells = {a: substitute(v, sub) for a, v in e.cells}
        return mk_load(cells, substitute(e.addr, sub), e.width)
    if isinstance(e, SIndexed):
        return mk_indexed(e.family, substitute(e.index, sub), substitute(e.init, sub), e.width)
    if isinstance(e, SForall):
        inner = {k: v for k, v in sub.items() if k != e.var}
        return mk_forall(e.var, e.lo, substitute(e.hi, inner), substitute(e.body, inner), e.var_width)
    raise TypeError(e)


# -- printing ------------------------------------------------------------

_SYM = {"AND": "&", "OR": "|", "XOR": "^", "PLUS": "+", "MINUS": "-", "MULT": "*",
        "DIV": "/", "MOD": "%", "LSL": "<<", "LSR": ">>", "EQ": "==", "NEQ": "!=",
        "LT": "<", "LE": "<="}


def pretty(e: SymExp) -> str:
    if isinstance(e, SConst):
        v = e.value
        return f"@{v.name}" if isinstance(v, LabelVal) else f"{v.value}:{v.length}"
    if isinstance(e, SVar):
        return e.name
    if isinstance(e, SUn):
        if e.op == "CAST":
            return f"cast({pretty(e.arg)}, {e.width})"
        return ("~" if e.op == "NOT" else "-") + _paren(e.arg)
    if isinstance(e, SBin):
        return f"{_paren(e.left)} {_SYM[e.op]} {_paren(e.right)}"
    if isinstance(e, SIte):
        return f"ite({pretty(e.cond)}, {pretty(e.then)}, {pretty(e.else_)})"
    if isinstance(e, SApp):
        return f"{e.fn}({', '.join(pretty(a) for a in e.args)})"
    if isinstance(e, SSlice):
        return f"{_paren(e.arg)}[{e.lo}:{e.lo + e.width}]"
    if isinstance(e, SConcat):
        return " || ".join(_paren(p) for p in e.parts)
    if isinstance(e, SLoad):
        return f"load(<{len(e.cells)} cells>, {pretty(e.addr)}, {e.width})"
    if isinstance(e, SIndexed):
        return f"{e.family}[{pretty(e.index)}]"
    if isinstance(e, SForall):
        return f"forall {e.var} in {e.lo}..{pretty(e.hi)}. {pretty(e.body)}"
    return repr(e)


def _paren(e: SymExp) -> str:
    s = pretty(e)
    return f"({s})" if isinstance(e, (SBin, SConcat, SForall)) else s


# -- interpretations -----------------------------------------------------

class Unbound(KeyError):
    """A primitive symbol has no value in the interpretation."""


class Undefined(ValueError):
    """The expression has no value (bottom), e.g. a failing op or a bad load."""


class Rebind(ValueError):
    pass


class Interpretation:
    """Values for primitive symbols plus definitions of defined symbols.

    Bindings only ever grow: ``bind`` refuses to change a value.
    """

    def __init__(self, values: Optional[Mapping[str, Bits]] = None,
                 defs: Optional[Mapping[str, SymExp]] = None,
                 registry: Optional[OpRegistry] = None):
        self.values: Dict[str, Bits] = dict(values or {})
        self.defs: Dict[str, SymExp] = dict(defs or {})
        self.registry = registry or _DEFAULT_REG

    def copy(self) -> "Interpretation":
        return Interpretation(self.values, self.defs, self.registry)

    def bind(self, name: str, value: Bits) -> None:
        old = self.values.get(name)
        if old is not None and old != value:
            raise Rebind(f"{name} already bound to {old}, not {value}")
        if name in self.defs:
            raise Rebind(f"{name} is a defined symbol")
        self.values[name] = value

    def define(self, name: str, defn: SymExp) -> None:
        old = self.defs.get(name)
        if old is not None and old != defn:
            raise Rebind(f"{name} already defined")
        self.defs[name] = defn

    def extends(self, other: "Interpretation") -> bool:
        return all(self.values.get(k) == v for k, v in other.values.items()) and \
            all(self.defs.get(k) == v for k, v in other.defs.items())

    def __contains__(self, name: str) -> bool:
        return name in self.values or name in self.defs

    def value_of(self, name: str) -> Bits:
        return interpret(self, SVar(name, None))

    def __repr__(self) -> str:
        return f"Interpretation({len(self.values)} values, {len(self.defs)} defs)"


def family_key(family: str, index: int) -> str:
    return f"{family}@{index}"


def interpret(h: Interpretation, e: SymExp, local: Optional[Dict[str, Bits]] = None) -> Any:
    """Ground value of ``e`` under ``h``.

    Raises ``Unbound`` for a primitive symbol without a value and
    ``Undefined`` when the value is bottom.
    """
    return _Interp(h, local or {}).run(e)


class _Interp:
    def __init__(self, h: Interpretation, local: Dict[str, Bits]):
        self.h, self.local = h, local
        self.cache: Dict[str, Any] = {}

    def run(self, e: SymExp):
        if isinstance(e, SConst):
            return e.value
        if isinstance(e, SVar):
            return self.var(e.name)
        if isinstance(e, SBin):
            a, b = self.run(e.left), self.run(e.right)
            if isinstance(a, LabelVal) or isinstance(b, LabelVal):
                if e.op in ("EQ", "NEQ"):
                    return Bits(int((a == b) == (e.op == "EQ")), 1)
                raise Undefined(f"{e.op} on labels")
            try:
                return apply_binop(e.op, a, b)
            except WidthError as exc:
                raise Undefined(str(exc)) from None
        if isinstance(e, SUn):
            return apply_unop(e.op, self.run(e.arg), e.width)
        if isinstance(e, SIte):
            return self.run(e.then if self.run(e.cond).value else e.else_)
        if isinstance(e, SApp):
            v = self.h.registry.apply(e.fn, [self.run(a) for a in e.args])
            if v is None:
                raise Undefined(f"{e.fn} undefined on its arguments")
            return v
        if isinstance(e, SSlice):
            x = self.run(e.arg)
            if e.lo + e.width > x.length:
                raise Undefined("slice out of range")
            return x.slice(e.lo, e.width)
        if isinstance(e, SConcat):
            return Bits.concat_all(self.run(p) for p in e.parts)
        if isinstance(e, SLoad):
            a = self.run(e.addr).value
            for addr, v in e.cells:
                if addr == a:
                    val = self.run(v)
                    if val.length != e.width:
                        raise Undefined("load width mismatch")
                    return val
            raise Undefined(f"load from unwritten address {a:#x}")
        if isinstance(e, SIndexed):
            i = self.run(e.index).value
            if i == 0:
                return self.run(e.init)
            return self.var(family_key(e.family, i))
        if isinstance(e, SForall):
            hi = self.run(e.hi).value
            for i in range(e.lo, hi + 1):
                sub = _Interp(self.h, {**self.local, e.var: Bits(i, e.var_width)})
                if not sub.run(e.body).value:
                    return Bits(0, 1)
            return Bits(1, 1)
        raise TypeError(e)

    def var(self, name: str):
        if name in self.local:
            return self.local[name]
        v = self.h.values.get(name)
        if v is not None:
            return v
        if name in self.cache:
            return self.cache[name]
        d = self.h.defs.get(name)
        if d is None:
            raise Unbound(name)
        v = self.run(d)
        self.cache[name] = v
        return v


def try_interpret(h: Interpretation, e: SymExp):
    try:
        return interpret(h, e)
    except (Unbound, Undefined):
        return None


def primitive_symbols(e: SymExp, defs: Mapping[str, SymExp],
                      bound: Iterable[str] = ()) -> Dict[str, Optional[int]]:
    """Primitive symbols reachable from ``e`` through definitions."""
    out: Dict[str, Optional[int]] = {}
    seen = set(bound)
    stack = [e]
    binders: set = set()
    while stack:
        x = stack.pop()
        binders |= all_binders(x)
        for name, w in symbols(x).items():
            if name in seen:
                continue
            seen.add(name)
            if name in defs:
                stack.append(defs[name])
            else:
                out[name] = w
    return {k: v for k, v in out.items() if k not in binders}


def all_binders(e: SymExp) -> set:
    acc, stack = set(), [e]
    while stack:
        x = stack.pop()
        if isinstance(x, SForall):
            acc.add(x.var)
        stack.extend(children(x))
    return acc
