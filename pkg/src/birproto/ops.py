"""Registry of named pure operations over bitstrings.

Every cryptographic primitive is abstract: an operation is a total Python
function from bitstrings to a bitstring, or to ``None`` when the result is
undefined (the IML value bottom).  The same registry serves the concrete
library calls of BIR programs, the interpretation of symbolic ``App`` nodes
and IML function application, so all three layers agree by construction.

The idealized default set uses tagging: ``enc`` output starts with a fixed
tag and a fingerprint of the key, and ``dec`` returns a failure status when
either does not match.
"""

from __future__ import annotations

import hashlib
import importlib
import json
import os
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

from .bits import BINOPS, Bits, WidthError, apply_binop, apply_unop

OPS_ENV_VAR = "BIRPROTO_OPS"

OpFn = Callable[..., Optional[Bits]]
WidthFn = Callable[[Sequence[Optional[int]]], Optional[int]]


@dataclass(frozen=True)
class OpSpec:
    name: str
    fn: OpFn
    arity: int
    width: Optional[WidthFn] = None


class UnknownOp(KeyError):
    pass


class OpRegistry:
    def __init__(self, specs: Optional[Dict[str, OpSpec]] = None):
        self._specs: Dict[str, OpSpec] = dict(specs or {})

    def register(self, name: str, fn: OpFn, arity: int, width: Optional[WidthFn] = None) -> None:
        self._specs[name] = OpSpec(name, fn, arity, width)

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def names(self) -> list[str]:
        return sorted(self._specs)

    def spec(self, name: str) -> OpSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownOp(name) from None

    def arity(self, name: str) -> int:
        return self.spec(name).arity

    def apply(self, name: str, args: Sequence[Optional[Bits]]) -> Optional[Bits]:
        """Apply an operation; bottom in any argument gives bottom."""
        spec = self.spec(name)
        if len(args) != spec.arity:
            raise ValueError(f"{name} expects {spec.arity} arguments, got {len(args)}")
        if any(a is None for a in args):
            return None
        try:
            return spec.fn(*args)
        except WidthError:
            return None

    def result_width(self, name: str, widths: Sequence[Optional[int]]) -> Optional[int]:
        spec = self.spec(name)
        if spec.width is None:
            return None
        try:
            return spec.width(widths)
        except (TypeError, WidthError):
            return None

    def copy(self) -> "OpRegistry":
        return OpRegistry(self._specs)


# -- idealized primitives ----------------------------------------------

ENC_TAG = Bits(0b1010, 4)
DEC_OK = Bits(0b0001, 4)
DEC_FAIL = Bits(0b0000, 4)


def fingerprint(key: Bits) -> Bits:
    """4-bit key fingerprint; injective on keys of at most four bits."""
    acc = 0
    v, n = key.value, key.length
    while n > 0:
        acc = (acc * 7 + 3 + (v & 0xF)) & 0xF
        v >>= 4
        n -= 4
    return Bits(acc, 4)


def keystream(key: Bits, n: int) -> Bits:
    if n == 0:
        return Bits.empty()
    if key.length == 0:
        return Bits(0, n)
    reps = -(-n // key.length)
    return Bits.concat_all([key] * reps).slice(0, n)


def enc(key: Bits, msg: Bits) -> Bits:
    body = Bits(msg.value ^ keystream(key, msg.length).value, msg.length)
    return ENC_TAG.concat(fingerprint(key)).concat(body)


def dec(key: Bits, ctxt: Bits) -> Bits:
    if ctxt.length < 8:
        return DEC_FAIL
    n = ctxt.length - 8
    if ctxt.slice(0, 4) != ENC_TAG or ctxt.slice(4, 4) != fingerprint(key):
        return DEC_FAIL.concat(Bits(0, n))
    body = ctxt.slice(8, n)
    return DEC_OK.concat(Bits(body.value ^ keystream(key, n).value, n))


def xor(a: Bits, b: Bits) -> Optional[Bits]:
    if a.length != b.length:
        return None
    return Bits(a.value ^ b.value, a.length)


def conc(a: Bits, b: Bits) -> Bits:
    return a.concat(b)


def mac(key: Bits, msg: Bits) -> Bits:
    data = f"{key.length}:{key.value}|{msg.length}:{msg.value}".encode()
    return Bits(hashlib.sha256(data).digest()[0], 8)


def conc1(x: Bits) -> Bits:
    return Bits(1, 1).concat(x)


def plain(d: Bits) -> Optional[Bits]:
    """Plaintext part of a decryption result (drops the status nibble)."""
    if d.length < 4:
        return None
    return d.slice(4, d.length - 4)


def _int_arg(b: Bits) -> int:
    return b.value


def _slice(x: Bits, lo: Bits, width: Bits) -> Optional[Bits]:
    lo_i, w_i = _int_arg(lo), _int_arg(width)
    if lo_i + w_i > x.length:
        return None
    return x.slice(lo_i, w_i)


def _cast(x: Bits, width: Bits) -> Bits:
    return apply_unop("CAST", x, _int_arg(width))


def _same(ws):
    return ws[0] if ws[0] is not None else ws[1]


def _binop_fn(op: str) -> OpFn:
    def fn(a: Bits, b: Bits) -> Optional[Bits]:
        return apply_binop(op, a, b)
    fn.__name__ = op.lower()
    return fn


def default_registry() -> OpRegistry:
    """Idealized crypto plus the operator vocabulary used by extracted models."""
    reg = OpRegistry()
    add = lambda ws: None if None in ws else ws[0] + ws[1]
    reg.register("enc", enc, 2, lambda ws: None if ws[1] is None else ws[1] + 8)
    reg.register("dec", dec, 2, lambda ws: None if ws[1] is None else max(ws[1] - 4, 4))
    reg.register("xor", xor, 2, _same)
    reg.register("conc", conc, 2, add)
    reg.register("mac", mac, 2, lambda ws: 8)
    reg.register("plain", plain, 1, lambda ws: None if ws[0] is None else ws[0] - 4)
    reg.register("conc1", conc1, 1, lambda ws: None if ws[0] is None else ws[0] + 1)
    reg.register("exclusive_or", xor, 2, _same)
    # operators that extracted expressions may contain
    for op in BINOPS:
        width = (lambda ws: 1) if op in ("EQ", "NEQ", "LT", "LE") else _same
        reg.register(op, _binop_fn(op), 2, width)
    reg.register("NOT", lambda a: apply_unop("NOT", a), 1, lambda ws: ws[0])
    reg.register("slice", _slice, 3, None)
    reg.register("concat", conc, 2, add)
    reg.register("cast", _cast, 2, None)
    reg.register("ite", lambda c, a, b: a if c.truthy() else b, 3, lambda ws: ws[1])
    # an explicitly undefined value, used for unwritten memory
    reg.register("bot", lambda: None, 0, None)
    return reg


def load_registry(path: Optional[str] = None) -> OpRegistry:
    """Default registry extended by a JSON config.

    The config maps op names to ``{"impl": "module:function", "arity": m}``.
    ``path`` defaults to the ``BIRPROTO_OPS`` environment variable.
    """
    reg = default_registry()
    path = path or os.environ.get(OPS_ENV_VAR)
    if not path:
        return reg
    with open(path) as fh:
        cfg = json.load(fh)
    for name, entry in cfg.get("ops", {}).items():
        mod_name, _, fn_name = entry["impl"].partition(":")
        fn = getattr(importlib.import_module(mod_name), fn_name)
        reg.register(name, fn, int(entry["arity"]))
    return reg
