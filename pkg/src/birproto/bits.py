"""Bitstrings and fixed-width word arithmetic.

A ``Bits`` value is an immutable bitstring stored as an unsigned integer plus
a length.  The first bit of the string is the most significant bit of the
integer, so concatenation is ``(a << len(b)) | b``.

BIR words are bitstrings whose length is one of ``WORD_WIDTHS``.  Operator
semantics live here so that the concrete interpreter, the symbolic
simplifier, interpretations and IML evaluation all share one definition.
"""

from __future__ import annotations

from typing import Iterable, Optional

WORD_WIDTHS = (1, 8, 16, 32, 64, 128)

BINOPS = (
    "AND", "OR", "XOR", "PLUS", "MINUS", "MULT", "DIV", "MOD",
    "LSL", "LSR", "EQ", "NEQ", "LT", "LE",
)
COMPARISONS = ("EQ", "NEQ", "LT", "LE")
UNOPS = ("NOT", "NEG", "CAST")


class WidthError(ValueError):
    """Operands or results have incompatible bit widths."""


class Bits:
    __slots__ = ("value", "length", "_hash")

    def __init__(self, value: int, length: int):
        if length < 0:
            raise WidthError(f"negative length {length}")
        if value < 0 or value >> length:
            raise WidthError(f"value {value} does not fit in {length} bits")
        self.value = value
        self.length = length
        self._hash = hash((value, length))

    # -- construction -------------------------------------------------
    @staticmethod
    def empty() -> "Bits":
        return _EMPTY

    @staticmethod
    def from_str(s: str) -> "Bits":
        """Parse a string of '0'/'1' characters."""
        if not s:
            return _EMPTY
        if set(s) - {"0", "1"}:
            raise ValueError(f"not a bit string: {s!r}")
        return Bits(int(s, 2), len(s))

    @staticmethod
    def from_hex(s: str, length: Optional[int] = None) -> "Bits":
        s = s.strip().lower()
        if s.startswith("0x"):
            s = s[2:]
        n = 4 * len(s) if length is None else length
        return Bits(int(s, 16) if s else 0, n)

    @staticmethod
    def concat_all(parts: Iterable["Bits"]) -> "Bits":
        v, n = 0, 0
        for p in parts:
            v = (v << p.length) | p.value
            n += p.length
        return Bits(v, n)

    # -- views --------------------------------------------------------
    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        return isinstance(other, Bits) and self.value == other.value and self.length == other.length

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Bits({self.to_str() or 'ε'})" if self.length <= 16 else f"Bits(0x{self.hex()}:{self.length})"

    def to_str(self) -> str:
        return format(self.value, f"0{self.length}b") if self.length else ""

    def hex(self) -> str:
        """Hex digits, left-padded with zero bits to a whole number of nibbles."""
        if self.length == 0:
            return ""
        digits = (self.length + 3) // 4
        return format(self.value, f"0{digits}x")

    def truthy(self) -> bool:
        return self.value != 0

    def concat(self, other: "Bits") -> "Bits":
        return Bits((self.value << other.length) | other.value, self.length + other.length)

    def slice(self, lo: int, width: int) -> "Bits":
        """``width`` bits starting ``lo`` bits from the front of the string."""
        if lo < 0 or width < 0 or lo + width > self.length:
            raise WidthError(f"slice [{lo}:{lo + width}] of {self.length}-bit string")
        shift = self.length - lo - width
        return Bits((self.value >> shift) & ((1 << width) - 1), width)

    def truncate(self, maxlen: int) -> "Bits":
        """Keep at most the first ``maxlen`` bits."""
        if self.length <= maxlen:
            return self
        return self.slice(0, maxlen)

    def chunks(self, width: int) -> list["Bits"]:
        if width <= 0 or self.length % width:
            raise WidthError(f"{self.length} bits do not split into {width}-bit chunks")
        return [self.slice(i, width) for i in range(0, self.length, width)]


_EMPTY = Bits(0, 0)
TRUE = Bits(1, 1)
FALSE = Bits(0, 1)


def word(value: int, width: int) -> Bits:
    """A BIR word; the value is reduced modulo 2**width."""
    if width not in WORD_WIDTHS:
        raise WidthError(f"width {width} is not a BIR word width")
    return Bits(value & ((1 << width) - 1), width)


def boolean(b: bool) -> Bits:
    return TRUE if b else FALSE


def _mask(width: int) -> int:
    return (1 << width) - 1


def apply_binop(op: str, a: Bits, b: Bits) -> Bits:
    """Evaluate a BIR binary operator on two equal-width bitstrings."""
    if a.length != b.length:
        raise WidthError(f"{op}: operand widths {a.length} and {b.length} differ")
    w = a.length
    x, y = a.value, b.value
    m = _mask(w)
    if op == "AND":
        r = x & y
    elif op == "OR":
        r = x | y
    elif op == "XOR":
        r = x ^ y
    elif op == "PLUS":
        r = (x + y) & m
    elif op == "MINUS":
        r = (x - y) & m
    elif op == "MULT":
        r = (x * y) & m
    elif op == "DIV":
        # division by zero yields the all-ones word
        r = m if y == 0 else x // y
    elif op == "MOD":
        # remainder by zero returns the dividend
        r = x if y == 0 else x % y
    elif op == "LSL":
        r = 0 if y >= w else (x << y) & m
    elif op == "LSR":
        r = 0 if y >= w else x >> y
    elif op == "EQ":
        return boolean(x == y)
    elif op == "NEQ":
        return boolean(x != y)
    elif op == "LT":
        return boolean(x < y)
    elif op == "LE":
        return boolean(x <= y)
    else:
        raise ValueError(f"unknown binary operator {op}")
    return Bits(r, w)


def apply_unop(op: str, a: Bits, width: Optional[int] = None) -> Bits:
    """Evaluate NOT, NEG or CAST.  CAST zero-extends or keeps the low bits."""
    m = _mask(a.length)
    if op == "NOT":
        return Bits(~a.value & m, a.length)
    if op == "NEG":
        return Bits(-a.value & m, a.length)
    if op == "CAST":
        if width is None:
            raise WidthError("CAST needs a target width")
        return Bits(a.value & _mask(width), width)
    raise ValueError(f"unknown unary operator {op}")


def binop_width(op: str, wa: Optional[int], wb: Optional[int]) -> Optional[int]:
    """Result width, or raise when both operand widths are known and differ."""
    if wa is not None and wb is not None and wa != wb:
        raise WidthError(f"{op}: operand widths {wa} and {wb} differ")
    if op in COMPARISONS:
        return 1
    return wa if wa is not None else wb


def chunk_for(length: int) -> int:
    """Cell width used when marshalling a bitstring of ``length`` bits.

    The largest word width dividing the length, so 128 whenever possible.
    """
    for w in reversed(WORD_WIDTHS):
        if length % w == 0:
            return w
    return 1
