import json
import os
from fractions import Fraction

import pytest

from birproto.bits import Bits
from birproto.corpus import generate_corpus
from birproto.events import Ev, TraceEvent
from birproto.iml import IMLContext, IMLState, enumerate_traces, format_process, parse_process, pr
from birproto.mixed import MixedSystem, iml_model_context
from birproto.security import (
    auth_property, check_attack_preservation, insecurity_bir, insecurity_bir_by_tapes, insecurity_iml,
    load_property, no_event_property, property_from_config, shortest_violations, weak_secrecy_property,
)

from helpers import RUNNING, attacker, random_process, running_system


def ev(name, *args):
    return TraceEvent("ev", name, tuple(args))


def fr(v):
    return TraceEvent("fr", "", (v,))


def msg(chan, v):
    return TraceEvent("msg", chan, (v,))


B1, B2 = Bits(1, 4), Bits(2, 4)


def test_authentication_needs_a_matching_earlier_marker():
    psi = auth_property("accept", "send")
    assert psi([ev("send", B1), ev("accept", B1)])
    assert not psi([ev("accept", B1), ev("send", B1)])
    assert not psi([ev("send", B2), ev("accept", B1)])
    assert psi([])


def test_weak_secrecy_watches_attacker_channels():
    psi = weak_secrecy_property([1])
    assert not psi([fr(B1), msg("c", B1)])
    assert psi([fr(B1), msg("c", B2)])
    # a value sent before it was drawn is not a leak of that draw
    assert psi([msg("c", B1), fr(B1)])
    scoped = weak_secrecy_property([1], channels=["d"])
    assert scoped([fr(B1), msg("c", B1)])
    assert not scoped([fr(B1), msg("d", B1)])
    by_fn = weak_secrecy_property(lambda frs: frs[1:])
    assert by_fn([fr(B1), fr(B2), msg("c", B1)])
    assert not by_fn([fr(B1), fr(B2), msg("c", B2)])


def test_forbidden_events():
    psi = no_event_property(["bad"])
    assert psi([ev("good")])
    assert not psi([ev("good"), ev("bad")])


def test_properties_from_files(tmp_path):
    auth = load_property(os.path.join(RUNNING, "auth.json"))
    assert not auth([ev("accept", B1)])
    forbid = load_property(os.path.join(RUNNING, "forbid_bad.json"))
    assert not forbid([ev("bad")])
    secrecy = property_from_config({"mode": "secrecy"})
    assert not secrecy([fr(B1), msg("c", B1)])
    with pytest.raises(ValueError):
        property_from_config({"mode": "liveness"})
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"mode": "forbid", "events": ["x"]}))
    assert not load_property(str(p))([ev("x")])


def test_shortest_violations_are_minimal_prefixes():
    psi = no_event_property(["bad"])
    traces = [[ev("a"), ev("bad"), ev("bad")], [ev("bad")], [ev("a")]]
    assert shortest_violations(traces, psi) == {(ev("a"), ev("bad")), (ev("bad"),)}


def test_fair_coin_is_half_insecure():
    p = parse_process("new x: fixed_1; if x = 0b1 then event bad; 0 else 0")
    r = insecurity_iml(p, 1, 10, no_event_property(["bad"]))
    assert r.value == Fraction(1, 2)
    assert not r.partial
    assert [w for _, w in r.violating_traces] == [Fraction(1, 2)]


def test_depth_cut_is_flagged_as_lower_bound():
    p = parse_process("new x: fixed_1; event a; event b; event bad; 0")
    r = insecurity_iml(p, 1, 2, no_event_property(["bad"]))
    assert r.value == 0 and r.partial
    assert "lower bound" in str(r)


def sequential_seeds(count):
    """Seeds whose random process has no parallel composition."""
    out, seed = [], 0
    while len(out) < count:
        if "|" not in format_process(random_process(seed)):
            out.append(seed)
        seed += 1
    return out


@pytest.mark.parametrize("seed", sequential_seeds(30))
def test_insecurity_equals_weight_of_violating_traces(seed):
    p = random_process(seed)
    psi = no_event_property(["a"])
    en = enumerate_traces(IMLContext(), IMLState.start(p), 200)
    oracle = sum((pr(t) for t, _ in en.traces
                  if any(isinstance(e, Ev) and e.name == "a" for e in t.events)), Fraction(0))
    assert insecurity_iml(p, 1, 200, psi).value == oracle


def test_running_example_is_secure_at_both_layers():
    sysm = running_system()
    psi = auth_property("accept", "send")
    ctx = iml_model_context(sysm)
    for name in ("eavesdrop", "replay"):
        rep = check_attack_preservation(attacker(name), sysm, 4, 1, 200, psi, ctx)
        assert rep.insec_iml.value == 0 and rep.insec_bir.value == 0
        assert rep.holds


def test_forged_messages_always_reach_the_reject_branch():
    sysm = running_system()
    rep = check_attack_preservation(attacker("replay"), sysm, 4, 1, 200, no_event_property(["bad"]))
    assert rep.insec_bir.value == 1 and rep.insec_iml.value == 1
    assert "holds: true" in rep.to_text()


def corpus_with_events(count):
    items = [it for it in generate_corpus(120, seed=11, n=2, max_rng=1) if "call bad" in it.source]
    return items[:count]


@pytest.mark.parametrize("item", corpus_with_events(12), ids=lambda it: it.name)
def test_drawing_on_demand_matches_averaging_over_tapes(item):
    sysm = MixedSystem({"main": item.program}, n=2, k=1)
    psi = no_event_property(["bad"])
    lazy = insecurity_bir(item.process, sysm, 2, 1, 60, psi)
    full = insecurity_bir_by_tapes(item.process, sysm, 2, 1, 60, psi)
    assert lazy.value == full.value
    assert full.tape_count == 4


@pytest.mark.parametrize("item", corpus_with_events(12), ids=lambda it: it.name)
def test_program_insecurity_is_bounded_by_the_model(item):
    sysm = MixedSystem({"main": item.program}, n=2, k=1)
    rep = check_attack_preservation(item.process, sysm, 2, 1, 60, no_event_property(["bad"]))
    assert rep.holds, rep.to_text()


def test_draw_width_must_match_the_system():
    with pytest.raises(ValueError):
        insecurity_bir(parse_process("0"), running_system(), 8, 1, 10, no_event_property(["bad"]))
