import os
from collections import Counter

import pytest

from birproto.bir import initial_state, run_concrete
from birproto.birparse import load_program, parse_program
from birproto.bits import Bits
from birproto.corpus import generate
from birproto.events import Crypto, Ev, Fail, Fresh, In, Out, Tau
from birproto.extract import (
    BOTTOM, LABEL_WIDTH, ExtractConfig, ExtractionError, UnmappedOperator, exp_to_iml, extract_program,
    label_bits, loop_proc, tree_to_iml,
)
from birproto.iml import (
    NIL, Event, IApp, IBits, IMLContext, IMLState, If, Input, IVar, Let, New, Output, Par, Repl, alpha_equal,
    enumerate_traces, parse_process,
)
from birproto.symexec import Branch, Leaf, Node, SymConfig, build_tree, initial_sym_state
from birproto.symexp import SApp, SUn, SVar, const, mk_bin

from helpers import EXAMPLES, loop_program


def read(path):
    with open(path) as f:
        return f.read()


def test_xor_client_matches_golden_model():
    p = load_program(os.path.join(EXAMPLES, "xor_client.bir"))
    got = extract_program(p, SymConfig(n=64, k=1))
    assert alpha_equal(got, parse_process(read(os.path.join(EXAMPLES, "xor_client.iml"))))
    # new; let; let; out; 0
    assert isinstance(got, New) and got.n == 64
    assert isinstance(got.cont, Let) and got.cont.exp.fn == "conc1"
    assert isinstance(got.cont.cont, Let) and got.cont.cont.exp.fn == "exclusive_or"
    assert isinstance(got.cont.cont.cont, Output) and got.cont.cont.cont.cont == NIL


def test_single_node_rules():
    assert tree_to_iml(Leaf()) == NIL
    x = SVar("x_r_rng_0", 4)
    assert tree_to_iml(Node("rng", Fresh(x, 1, x.name), Leaf())) == New(x.name, 4, NIL)
    assert tree_to_iml(Node("q", Tau(), Leaf())) == NIL
    v = SVar("v", 12)
    app = SApp("enc", (SVar("k", 4), SVar("m", 4)), 12)
    assert tree_to_iml(Node("enc", Crypto(v, "enc", app), Leaf())) == Let("v", IApp("enc", (IVar("k"), IVar("m"))), NIL)
    out = tree_to_iml(Node("s", Out(SVar("m", 4), "c"), Leaf()))
    assert out == Output("c", (), IVar("m"), NIL)


def test_truncated_leaf_is_rejected():
    with pytest.raises(ExtractionError, match="truncated"):
        tree_to_iml(Node("a", Tau(), Leaf("depth", "bound")))


def test_expression_table():
    x = SVar("x", 8)
    assert exp_to_iml(mk_bin("EQ", x, const(1, 8))) == IApp("EQ", (IVar("x"), IBits(Bits(1, 8))))
    assert exp_to_iml(SApp("enc", (SVar("k", 4), x), 16)) == IApp("enc", (IVar("k"), IVar("x")))


def test_arithmetic_negation_has_no_counterpart():
    with pytest.raises(UnmappedOperator) as info:
        exp_to_iml(SUn("NEG", SVar("x", 8), 8))
    assert info.value.marker == BOTTOM and info.value.op == "NEG"


def test_labels_share_one_width():
    assert label_bits("t").length == LABEL_WIDTH
    assert label_bits("e1").length == label_bits(7).length == LABEL_WIDTH
    assert label_bits("x" * 20).length == 160
    assert label_bits("ab") != label_bits("ba")


def test_loop_body_without_recording():
    with pytest.raises(ExtractionError, match="recorded body"):
        loop_proc(Node("h", Tau(), Leaf()))


def _kinds_along(tree, proc, acc, out):
    """Walk tree and process together; branches follow both sides."""
    if isinstance(tree, Leaf):
        assert proc == NIL
        out.append(acc)
        return
    if isinstance(tree, Branch):
        assert isinstance(proc, If)
        _kinds_along(tree.then, proc.then, acc, out)
        _kinds_along(tree.else_, proc.else_, acc, out)
        return
    ev = tree.ev
    if isinstance(ev, Fail):
        assert proc == NIL
        out.append(acc + ["fail"])
        return
    if isinstance(ev, Tau):
        return _kinds_along(tree.child, proc, acc, out)
    expected = {Fresh: New, Crypto: Let, Ev: Event, In: Input, Out: Output}[type(ev)]
    assert isinstance(proc, expected)
    _kinds_along(tree.child, proc.cont, acc + [expected.__name__], out)


@pytest.mark.parametrize("seed", range(25))
def test_event_order_survives_translation(seed):
    item = generate(seed)
    cfg = SymConfig(n=4, k=2)
    tree = build_tree(item.program, cfg=cfg)
    proc = tree_to_iml(tree)
    paths = []
    _kinds_along(tree, proc, [], paths)
    assert paths
    # the translation is a pure function of the tree
    assert tree_to_iml(tree) == proc


def test_concrete_program_runs_identically_as_a_model():
    text = "\n".join([
        "block a:", "  R1 := R0", "  call hello, b",
        "block b:", "  call net_send, c",
        "block c:", "  halt",
    ]) + "\n"
    cfg = {"events": ["hello"], "event_arity": {"hello": 1}, "attacker_send": ["net_send"],
           "channels": {"net_send": {"chan": "c"}}, "params": {"a": [["x", 8]]}}
    p = parse_program(text, cfg)
    conc = run_concrete(p, initial_state(p, "a", [Bits(3, 8)])).observable()
    scfg = SymConfig(n=4, k=0)
    tree = build_tree(p, initial_sym_state(p, "a", [const(3, 8)], scfg), scfg)
    proc = tree_to_iml(tree)
    system = parse_process("in(c, z); event sent(z); 0")
    en = enumerate_traces(IMLContext(), IMLState.start(Par(system, proc)), 40, "first")
    [(t, _)] = en.traces
    evs = [e for e in t.observable() if isinstance(e, Ev)]
    assert [e.name for e in evs] == ["hello", "sent"]
    assert conc == [Ev("hello", (Bits(3, 8),)), Out(Bits(3, 8), "c")]
    assert [e.args for e in evs] == [(Bits(3, 8),), (Bits(3, 8),)]


@pytest.mark.parametrize("seed", range(8))
def test_loops_become_bounded_replication(seed):
    text, cfg = loop_program(seed)
    p = parse_program(text, cfg)
    proc = extract_program(p, SymConfig(n=4, k=1), ExtractConfig(repl_bound=8))
    assert _has_repl(proc)
    plain = parse_program(text, {k: v for k, v in cfg.items() if k != "loops"})
    tr = run_concrete(plain, initial_state(plain, "main", [Bits(5, 8)]))
    ticks = sum(1 for e in tr.observable() if isinstance(e, Ev) and e.name == "tick")
    en = enumerate_traces(IMLContext(), IMLState.start(proc, {"arg": Bits(5, 8)}), 400, "first")
    [(t, _)] = en.traces
    assert t.status == "done"
    assert Counter(e.name for e in t.observable() if isinstance(e, Ev))["tick"] == ticks


def _has_repl(p):
    while p is not None and p != NIL:
        if isinstance(p, Repl):
            return True
        p = getattr(p, "cont", None)
    return False


def test_loop_under_a_branch_is_noted():
    text = "\n".join([
        "block main:", "  P := R0", "  A := load(Mem, P + 1:64, 8)", "  I := 0:8",
        "  cjmp A < 4:8, @head, @out",
        "block head:", "  cjmp I < 3:8, @body, @out",
        "block body:", "  I := I + 1:8", "  jmp @head",
        "block out:", "  halt",
    ]) + "\n"
    p = parse_program(text, {"loops": {"head": "out"}, "params": {"main": [["arg", 8]]}})
    ecfg = ExtractConfig()
    extract_program(p, SymConfig(n=4, k=1), ecfg)
    assert any("under a branch" in d for d in ecfg.diagnostics)
