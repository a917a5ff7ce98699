import pytest

from birproto.bits import Bits
from birproto.birparse import parse_program
from birproto.events import Loop
from birproto.loops import NotSummarizable, summarize_loop
from birproto.symexec import SymConfig, SymExecError, initial_sym_state, sym_step
from birproto.symexp import Interpretation, interpret

from helpers import loop_exit_values, loop_program


def at_head(text, cfg, scfg):
    p = parse_program(text, cfg)
    s = initial_sym_state(p, cfg=scfg)
    while s.pc != "head":
        [(s, _)] = sym_step(p, s, scfg)
    return p, s


def test_counter_loop_summary_shape():
    text, cfg = loop_program(3)
    p, s = at_head(text, cfg, SymConfig(n=4, k=1))
    sm = summarize_loop(s, p, SymConfig(n=4, k=1))
    assert sm.kinds["I"] == "affine" and sm.kinds["S"] == "affine"
    assert sm.kinds["A"] == "unchanged" and sm.kinds["U"] == "unchanged"
    assert sm.kinds["W"] == "recurrent"
    assert sm.count is not None
    assert interpret(Interpretation(), sm.count) == Bits(2, 8)
    assert len(sm.exits) == 1


def test_summarized_step_emits_one_loop_event():
    text, cfg = loop_program(3)
    scfg = SymConfig(n=4, k=1)
    p, s = at_head(text, cfg, scfg)
    [(st, ev)] = sym_step(p, s, scfg)
    assert isinstance(ev, Loop)
    assert st.pc == "out"


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("arg", [0, 77, 255])
def test_summary_agrees_with_unrolling_and_concrete_run(seed, arg):
    summary, unrolled, concrete, summarized, diags = loop_exit_values(seed, arg)
    assert summarized and not diags
    assert summary == unrolled == concrete


@pytest.mark.parametrize("seed", range(6))
def test_self_dependent_register_falls_back_to_unrolling(seed):
    summary, unrolled, concrete, summarized, diags = loop_exit_values(seed, 9, summarizable=False)
    assert not summarized
    assert any("U" in d and "unrolling" in d for d in diags)
    assert summary == unrolled == concrete


def test_self_dependent_register_is_not_summarizable():
    text, cfg = loop_program(0, summarizable=False)
    scfg = SymConfig(n=4, k=1)
    p, s = at_head(text, cfg, scfg)
    with pytest.raises(NotSummarizable):
        summarize_loop(s, p, scfg)


def test_unroll_bound_is_enforced():
    text = "\n".join([
        "block main:", "  I := 0:8", "  U := 1:8", "  jmp @head",
        "block head:", "  cjmp I < 9:8, @body, @out",
        "block body:", "  U := U * U", "  I := I + 1:8", "  jmp @head",
        "block out:", "  halt",
    ]) + "\n"
    cfg = {"loops": {"head": "out"}}
    scfg = SymConfig(n=4, k=1, unroll_bound=3)
    p, s = at_head(text, cfg, scfg)
    with pytest.raises(SymExecError, match="unrolled"):
        while s.status == "run":
            [(s, _)] = sym_step(p, s, scfg)
