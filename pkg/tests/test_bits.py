import ctypes

import pytest
from hypothesis import given, strategies as st

from birproto.bits import Bits, WidthError, apply_binop, apply_unop, chunk_for, word

# machine integers wrap like BIR words
CTYPE = {8: ctypes.c_uint8, 16: ctypes.c_uint16, 32: ctypes.c_uint32, 64: ctypes.c_uint64}


def words(width):
    return st.integers(0, (1 << width) - 1).map(lambda v: Bits(v, width))


@st.composite
def word_pairs(draw):
    w = draw(st.sampled_from(sorted(CTYPE)))
    return w, draw(words(w)), draw(words(w))


@given(word_pairs())
def test_wrapping_arithmetic_matches_machine_words(case):
    w, a, b = case
    c = CTYPE[w]
    assert apply_binop("PLUS", a, b).value == c(a.value + b.value).value
    assert apply_binop("MINUS", a, b).value == c(a.value - b.value).value
    assert apply_binop("MULT", a, b).value == c(a.value * b.value).value
    assert apply_unop("NEG", a).value == c(-a.value).value
    assert apply_unop("NOT", a).value == c(~a.value).value


@given(word_pairs())
def test_comparisons_are_one_bit(case):
    _, a, b = case
    assert apply_binop("LT", a, b) == Bits(int(a.value < b.value), 1)
    assert apply_binop("EQ", a, b) == Bits(int(a == b), 1)


def test_division_by_zero_conventions():
    a = Bits(9, 8)
    assert apply_binop("DIV", a, Bits(0, 8)) == Bits(255, 8)
    assert apply_binop("MOD", a, Bits(0, 8)) == a


def test_shift_past_width_is_zero():
    assert apply_binop("LSL", Bits(1, 8), Bits(8, 8)) == Bits(0, 8)
    assert apply_binop("LSR", Bits(128, 8), Bits(7, 8)) == Bits(1, 8)


def test_mixed_widths_raise():
    with pytest.raises(WidthError):
        apply_binop("PLUS", Bits(1, 8), Bits(1, 16))


@given(st.binary(max_size=16), st.binary(max_size=16))
def test_concat_then_slice_recovers_parts(x, y):
    a = Bits(int.from_bytes(x, "big"), 8 * len(x))
    b = Bits(int.from_bytes(y, "big"), 8 * len(y))
    ab = a.concat(b)
    assert ab.length == a.length + b.length
    assert ab.slice(0, a.length) == a
    assert ab.slice(a.length, b.length) == b


@given(st.text(alphabet="01", max_size=40))
def test_bit_string_round_trip(s):
    assert Bits.from_str(s).to_str() == s


def test_big_endian_order():
    b = Bits.from_str("1000")
    assert b.slice(0, 1) == Bits(1, 1)
    assert b.hex() == "8"
    assert Bits.from_hex("0x0a").length == 8


@given(st.integers(1, 512))
def test_chunk_width_divides_length(n):
    c = chunk_for(n)
    assert n % c == 0
    assert c in (1, 8, 16, 32, 64, 128)
    # no larger word width divides n
    assert all(n % w for w in (8, 16, 32, 64, 128) if w > c)


def test_word_rejects_odd_widths():
    with pytest.raises(WidthError):
        word(1, 12)
    assert word(257, 8) == Bits(1, 8)
