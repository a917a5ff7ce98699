from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from birproto.bits import Bits
from birproto.events import Comm, Ev, Fresh, Tau
from birproto.iml import (
    NIL, IMLContext, IMLParseError, IMLState, IMLStuck, Input, alpha_equal,
    enumerate_traces, format_process, free_vars, iml_step, iml_successors, parse_process, pr, reduce,
)
from birproto.ops import default_registry

from helpers import random_process

CTX = IMLContext()


def traces(text, env=None, depth=50, scheduler="all", ctx=CTX):
    return enumerate_traces(ctx, IMLState.start(parse_process(text), env), depth, scheduler)


def test_reduce_splits_parallel_inputs():
    p = parse_process("in(c, x); 0 | in(d, y); 0")
    members = reduce(CTX, [({}, p)])
    assert [type(q) for _, q in members] == [Input, Input]


def test_reduce_drops_nil_and_binds_lets():
    assert reduce(CTX, [({}, NIL)]) == []
    [(env, q)] = reduce(CTX, [({}, parse_process("let x = 0x05 in in(c, y); 0"))])
    assert dict(env)["x"] == Bits(5, 8)
    assert isinstance(q, Input)


def test_reduce_is_idempotent_on_its_output():
    p = parse_process("let a = 0b1 in (in(c, x); 0 | event e; 0 | out(d, a); 0)")
    once = reduce(CTX, [({}, p)])
    assert reduce(CTX, [(dict(env), q) for env, q in once]) == once


def test_new_draws_every_value_with_equal_weight():
    succ = iml_successors(CTX, IMLState.start(parse_process("new x: fixed_2; 0")))
    assert len(succ) == 4
    assert all(s.prob == Fraction(1, 4) for s in succ)
    chosen = succ[0b10]
    assert chosen.event == Fresh(Bits(0b10, 2), 1, "x")
    assert dict(chosen.state.active[0])["x"] == Bits(0b10, 2)


def test_output_hands_truncated_payload_to_receiver():
    ctx = IMLContext(maxlen={"c": 4})
    s = IMLState.start(parse_process("in(c, y); event got(y); 0 | out(c, 0xab); 0"))
    trs = enumerate_traces(ctx, s, 20).traces
    got = [e for t, _ in trs for e in t.observable() if isinstance(e, Ev)]
    assert got == [Ev("got", (Bits(0xA, 4),))]
    comm = [e for t, _ in trs for e in t.events if isinstance(e, Comm)]
    assert comm[0].payload == Bits(0xA, 4)


def test_if_on_true_takes_then_branch():
    [s] = iml_successors(CTX, IMLState.start(parse_process("if 0x1 = 0x1 then event yes; 0 else event no; 0")))
    assert s.prob == 1 and s.event == Tau()
    _, ev, _ = iml_step(CTX, s.state)
    assert ev == Ev("yes", ())


def test_missing_receiver_is_reported_as_stuck():
    [(t, _)] = traces("out(c, 0x01); 0").traces
    assert t.status == "stuck" and "no receiver" in t.reason


def test_two_receivers_are_ambiguous():
    trs = traces("in(c, x); 0 | in(c, y); 0 | out(c, 0x01); 0").traces
    errors = [t.reason for t, _ in trs if t.status == "error"]
    assert errors and all("2 receivers" in r for r in errors)


def test_event_on_bottom_is_stuck():
    ctx = IMLContext()
    s = IMLState.start(parse_process("let x = xor(0x01, 0b1) in event e(x); 0"))
    with pytest.raises(IMLStuck):
        s, _, _ = iml_step(ctx, s)
        iml_step(ctx, s)


def test_nil_has_a_single_empty_trace():
    [(t, _)] = traces("0").traces
    assert t.steps == [] and pr(t) == 1


def test_uniform_draw_gives_four_quarter_traces():
    trs = traces("new x: fixed_2; 0").traces
    assert len(trs) == 4
    assert all(pr(t) == Fraction(1, 4) for t, _ in trs)


def test_probability_of_a_trace_is_the_product():
    trs = traces("new a: fixed_2; new b: fixed_2; 0").traces
    assert {pr(t) for t, _ in trs} == {Fraction(1, 16)}
    [t3] = [t for t, _ in traces("new a: fixed_3; 0").traces][:1]
    assert pr(t3) == Fraction(1, 8)


def test_xor_client_model_runs_as_one_trace_per_pad():
    # the shipped model with a narrower pad, so every draw can be listed
    text = ("new OTP: fixed_4; let Conc1 = conc1(OTP) in let XOR = exclusive_or(Conc1, pad) in out(c, XOR); 0"
            " | in(c, m); 0")
    env = {"pad": Bits(0b10110, 5)}
    trs = traces(text, env, scheduler="first").traces
    assert len(trs) == 16
    reg = default_registry()
    for t, _ in trs:
        assert t.status == "done"
        kinds = [type(e).__name__ for e in t.events]
        assert kinds.count("Fresh") == 1 and kinds.count("Comm") == 1
        assert kinds.index("Fresh") < kinds.index("Comm")
        fr = next(e for e in t.events if isinstance(e, Fresh))
        sent = next(e for e in t.events if isinstance(e, Comm)).payload
        assert sent == reg.apply("exclusive_or", [reg.apply("conc1", [fr.value]), env["pad"]])
        assert pr(t) == Fraction(1, 16)


def test_repl_runs_sequential_copies():
    [(t, _)] = traces("!^{r <= 3} event tick(r); 0; event done; 0").traces
    names = [(e.name, e.args) for e in t.observable() if isinstance(e, Ev)]
    assert names[:3] == [("tick", (Bits(1, 8),)), ("tick", (Bits(2, 8),)), ("tick", (Bits(3, 8),))]
    assert names[-1] == ("done", ())


def test_printer_round_trips_examples():
    for text in [
        "new x: fixed_2; if x = 0b01 then event bad; 0 else 0",
        "in(c[0x01], m); out(d, enc(m, 0x0f)); 0",
        "let y = x ^ 0xff in assume y < 0x10; 0",
    ]:
        p = parse_process(text)
        assert parse_process(format_process(p)) == p


def test_parse_errors():
    with pytest.raises(IMLParseError):
        parse_process("new x: fixed_; 0")
    with pytest.raises(IMLParseError):
        parse_process("out(c, 0x01); 0 junk")


def test_alpha_equivalence_ignores_bound_names():
    assert alpha_equal(parse_process("new a: fixed_1; out(c, a); 0"), parse_process("new b: fixed_1; out(c, b); 0"))
    assert not alpha_equal(parse_process("out(c, a); 0"), parse_process("out(c, b); 0"))
    assert free_vars(parse_process("let y = x in out(c, y); 0")) == {"x"}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_random_processes_have_total_probability_one(seed):
    p = random_process(seed)
    assert parse_process(format_process(p)) == p
    en = enumerate_traces(CTX, IMLState.start(p), 200, "first")
    assert not en.partial
    assert sum(pr(t) for t, _ in en.traces) == 1
    for t, _ in en.traces:
        for ev, prob in t.steps:
            assert (prob != 1) == isinstance(ev, Fresh)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_rendezvous_pool_accounting(seed):
    p = random_process(seed, depth=5)
    s = IMLState.start(p)
    for _ in range(60):
        succ = iml_successors(CTX, s)
        if not succ:
            break
        for x in succ:
            if isinstance(x.event, Comm):
                _, sender = s.active
                cont = reduce(CTX, [(dict(s.active[0]), sender.cont)])
                assert len(x.state.pool) == len(s.pool) + len(cont) - 1
        s = succ[seed % len(succ)].state
        seed //= 3


@given(st.binary(max_size=8), st.integers(0, 80))
def test_truncate_keeps_a_prefix(raw, m):
    b = Bits(int.from_bytes(raw, "big"), 8 * len(raw))
    t = b.truncate(m)
    assert t.length <= m
    assert b.slice(0, t.length) == t

