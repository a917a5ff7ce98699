import random

import pytest

from birproto.bir import RandomTape
from birproto.bits import Bits
from birproto.corpus import generate
from birproto.events import Ev, Fresh
from birproto.iml import IMLContext, RunTarget, parse_process
from birproto.mixed import (
    MixedError, MixedSystem, differential_run_bir_sbir, differential_run_sbir_iml, initial_mixed,
    iml_model_context, mixed_successors, mixed_traces,
)

from helpers import attacker, running_system


@pytest.mark.parametrize("word", range(16))
def test_relayed_message_is_accepted(word):
    sysm = running_system()
    s0 = initial_mixed(sysm, attacker("eavesdrop"), "bir", RandomTape((Bits(word, 4),), 4))
    traces, partial = mixed_traces(sysm, s0, depth=60)
    assert not partial
    accepted = {e.args for t in traces for e in t.events if isinstance(e, Ev) and e.name == "accept"}
    assert accepted == {(Bits(word, 4),)}


@pytest.mark.parametrize("word", range(16))
def test_lockstep_on_running_example(word):
    sysm = running_system()
    for name in ("eavesdrop", "replay"):
        r = differential_run_bir_sbir(sysm, attacker(name), RandomTape((Bits(word, 4),), 4), seed=word)
        assert r.ok, r.to_text()
    # the fresh value of the client is bound to the tape word
    assert Bits(word, 4) in r.h_final.values.values()


def test_symbolic_traces_exist_in_the_model():
    r = differential_run_sbir_iml(running_system(), attacker("eavesdrop"), depth=60)
    assert r.ok, r.witness
    # 16 keys, 16 grounded messages, accept or not
    assert r.paths == 512


def test_forged_messages_exist_in_the_model():
    # the replaying attacker with the key fixed, to keep the path count small
    i = parse_process("run client(0x5) | run server(0x5) | in(c, m); new z: fixed_4; out(d, conc(0x05, z))")
    r = differential_run_sbir_iml(running_system(), i, depth=60)
    assert r.ok, r.witness


@pytest.mark.parametrize("seed", range(30))
def test_corpus_programs_in_lockstep(seed):
    item = generate(seed)
    sysm = MixedSystem({"main": item.program}, n=4, k=2)
    rnd = random.Random(seed)
    for j in range(3):
        tape = RandomTape(tuple(Bits(rnd.randrange(16), 4) for _ in range(2)), 4)
        r = differential_run_bir_sbir(sysm, item.process, tape, seed=j)
        assert r.ok, r.to_text()
    r = differential_run_sbir_iml(sysm, item.process, depth=60)
    assert r.ok, r.witness


def test_wrong_model_is_detected():
    sysm = running_system()
    ctx = iml_model_context(sysm)
    # a client model that announces a constant instead of the drawn message
    ctx.runs["client"] = RunTarget(("key",), parse_process(
        "new m: fixed_4; event send(0x0); let e = enc(key, m) in out(c, e); 0"))
    r = differential_run_sbir_iml(sysm, attacker("eavesdrop"), depth=60, ctx=ctx)
    assert not r.ok
    assert "no IML trace" in r.witness["reason"]


def test_model_with_a_wider_draw_has_the_wrong_probability():
    sysm = running_system()
    ctx = iml_model_context(sysm)
    good = ctx.runs["client"].process
    assert good.n == 4
    ctx.runs["client"] = RunTarget(ctx.runs["client"].params, type(good)(good.var, 5, good.cont))
    r = differential_run_sbir_iml(sysm, attacker("eavesdrop"), depth=60, ctx=ctx)
    assert not r.ok


def test_unknown_entry_is_an_error():
    sysm = running_system()
    s0 = initial_mixed(sysm, parse_process("run nowhere()"), "bir")
    with pytest.raises(MixedError, match="unknown entry"):
        s = s0
        for _ in range(5):
            [x] = mixed_successors(sysm, s)
            s = x.state


def test_flavor_is_checked():
    with pytest.raises(ValueError):
        initial_mixed(running_system(), parse_process("0"), "xbir")
    with pytest.raises(ValueError):
        initial_mixed(running_system(), parse_process("0"), "sbir", bind_tape=True)


def test_fresh_values_come_from_the_tape_in_order():
    sysm = running_system(k=2)
    i = parse_process("new key: fixed_4; (run client(key) | in(c, m); 0)")
    s0 = initial_mixed(sysm, i, "bir", RandomTape((Bits(9, 4), Bits(3, 4)), 4))
    traces, _ = mixed_traces(sysm, s0, depth=40)
    frs = [e for t in traces for e in t.events if isinstance(e, Fresh) and e.index]
    # the IML draw has 16 outcomes; every program draw reads the first word
    assert {e.value for e in frs if e.name and e.name.startswith("x_r")} <= {Bits(9, 4)}


def test_model_context_uses_extracted_programs():
    ctx = iml_model_context(running_system())
    assert set(ctx.runs) == {"client", "server"}
    assert ctx.runs["client"].params == ("key",)
    assert isinstance(ctx, IMLContext)
