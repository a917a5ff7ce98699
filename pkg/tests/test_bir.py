import os

import pytest
from hypothesis import given, settings, strategies as st

from birproto.bir import (
    CTR, MEM, MEM_OP, HEAP, BirError, Blocked, RandomTape, TapeExhausted, bir_step, fresh_env,
    initial_state, mload, mstore, rng_read, run_concrete,
)
from birproto.birparse import ParseError, format_program, load_program, parse_program
from birproto.bits import Bits, WidthError, word
from birproto.corpus import generate
from birproto.events import Crypto, Ev, Fresh, In, Out
from birproto.ops import enc, fingerprint

from helpers import RUNNING

CLIENT = os.path.join(RUNNING, "client.bir")
SERVER = os.path.join(RUNNING, "server.bir")


def test_client_run_emits_draw_announce_encrypt_send():
    p = load_program(CLIENT)
    key = Bits(0x9, 4)
    tape = RandomTape((Bits(0x3, 4),), 4)
    tr = run_concrete(p, initial_state(p, "client", [key]), tape)
    assert tr.status == "halt"
    obs = tr.observable()
    assert [type(e) for e in obs] == [Fresh, Ev, Crypto, Out]
    assert obs[0] == Fresh(Bits(0x3, 4), 1)
    assert obs[1] == Ev("send", (Bits(0x3, 4),))
    # the ciphertext is the registry's encryption of the drawn message
    assert obs[3].payload == enc(key, Bits(0x3, 4))
    assert obs[3].chan == "c"


def test_server_accepts_what_the_client_sent():
    c, s = load_program(CLIENT), load_program(SERVER)
    key, msg = Bits(0x5, 4), Bits(0xC, 4)
    ct = run_concrete(c, initial_state(c, "client", [key]), RandomTape((msg,), 4)).observable()[-1].payload
    tr = run_concrete(s, initial_state(s, "server", [key]), driver={"d": [ct]})
    assert tr.status == "halt"
    assert tr.observable()[-1] == Ev("accept", (msg,))


def test_server_rejects_wrong_key():
    c, s = load_program(CLIENT), load_program(SERVER)
    ct = run_concrete(c, initial_state(c, "client", [Bits(1, 4)]), RandomTape((Bits(7, 4),), 4)).observable()[-1].payload
    assert fingerprint(Bits(1, 4)) != fingerprint(Bits(2, 4))
    tr = run_concrete(s, initial_state(s, "server", [Bits(2, 4)]), driver={"d": [ct]})
    assert tr.observable()[-1] == Ev("bad", ())


def test_receive_without_message_blocks():
    s = load_program(SERVER)
    tr = run_concrete(s, initial_state(s, "server", [Bits(2, 4)]))
    assert tr.status == "blocked"
    with pytest.raises(Blocked):
        state = tr.states[-1]
        bir_step(s, state)


def test_tape_exhaustion_and_fresh_index():
    env = fresh_env(RandomTape((Bits(1, 2), Bits(2, 2), Bits(3, 2), Bits(0, 2)), 2))
    x, env, idx = rng_read(env, 4)
    assert (x, idx) == (Bits(0b0110, 4), 1)
    x, env, idx = rng_read(env, 4)
    assert (x, idx) == (Bits(0b1100, 4), 2)
    assert env[CTR] == word(4, 64)
    with pytest.raises(TapeExhausted):
        rng_read(env, 4)


@settings(max_examples=200)
@given(st.integers(0, 200).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, (1 << n) - 1 if n else 0))))
def test_mload_inverts_mstore(case):
    n, v = case
    b = Bits(v, n)
    env, addr = mstore(fresh_env(), HEAP, MEM, b)
    assert mload(env, addr) == b
    # the cursor moved past the length word and every cell
    assert env[HEAP].value > addr.value


def test_store_to_other_region_leaves_mem_op_alone():
    env = fresh_env()
    env2, _ = mstore(env, HEAP, MEM, Bits(5, 8))
    assert env2[MEM_OP] == env[MEM_OP]


def test_call_without_return_site():
    p = parse_program("block a:\n  jmp @rng\n---\n{\"rng\": [\"rng\"]}")
    s = initial_state(p, "a", (), RandomTape((Bits(0, 4),), 4))
    s, _, _ = bir_step(p, s)
    with pytest.raises(BirError, match="LR"):
        bir_step(p, s)


def test_assert_failure_ends_run():
    p = parse_program("block a:\n  assert 0:1\n  halt\n")
    tr = run_concrete(p, initial_state(p, "a"))
    assert tr.status == "fail"


def test_width_mismatch_is_an_error():
    p = parse_program("block a:\n  X := 1:8\n  halt\n")
    with pytest.raises(ParseError):
        parse_program("block a:\n  X := 1:8 + 1:16\n  halt\n")
    assert run_concrete(p, initial_state(p, "a")).status == "halt"


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as info:
        parse_program("block a:\n  X := (1:8\n")
    assert "2:" in str(info.value)


def test_partition_overlap_is_rejected():
    with pytest.raises(ParseError, match="overlap"):
        parse_program("block a:\n  halt\n---\n{\"rng\": [\"f\"], \"ops\": {\"enc\": [\"f\"]}}")


@pytest.mark.parametrize("seed", range(20))
def test_canonical_form_is_a_fixed_point(seed):
    item = generate(seed)
    text = format_program(item.program)
    again = format_program(parse_program(text))
    assert again == text


def test_op_outside_width_fails_cleanly():
    with pytest.raises(WidthError):
        RandomTape((Bits(0, 3),), 4)


def test_receive_stores_in_attacker_region():
    s = load_program(SERVER)
    msg = Bits(0xABC, 12)
    tr = run_concrete(s, initial_state(s, "server", [Bits(2, 4)]), driver={"d": [msg]})
    got = [e for e in tr.events if isinstance(e, In)]
    assert got == [In(msg, "d", ())]
    after = tr.states[2]
    assert mload(after.env, after.env["R0"]) == msg
    assert after.env["R0"].value >= 0x3000_0000
