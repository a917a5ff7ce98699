import os

import pytest

from birproto.bir import RandomTape, initial_state, run_concrete
from birproto.birparse import format_program
from birproto.bits import Bits
from birproto.corpus import generate, generate_corpus, load_corpus, write_corpus
from birproto.iml import format_process

from helpers import EXAMPLES


def test_same_seed_same_corpus():
    a = generate_corpus(10, seed=3)
    b = generate_corpus(10, seed=3)
    assert [x.source for x in a] == [x.source for x in b]
    assert [x.iml_text for x in a] == [x.iml_text for x in b]
    assert [x.source for x in generate_corpus(10, seed=4)] != [x.source for x in a]


def test_written_corpus_loads_back(tmp_path):
    bases = write_corpus(str(tmp_path), 5, seed=2)
    assert len(bases) == 5
    loaded = load_corpus(str(tmp_path))
    items = generate_corpus(5, seed=2)
    assert [name for name, _, _ in loaded] == [x.name for x in items]
    for (_, prog, proc), item in zip(loaded, items):
        assert format_program(prog) == format_program(item.program)
        assert format_process(proc) == format_process(item.process)


def test_shipped_corpus_is_reproducible():
    shipped = load_corpus(os.path.join(EXAMPLES, "corpus"))
    assert len(shipped) == 40
    fresh = generate_corpus(40, seed=7)
    for (name, prog, _), item in zip(shipped, fresh):
        assert name == item.name
        assert format_program(prog) == format_program(item.program)


@pytest.mark.parametrize("seed", range(40))
def test_every_path_fits_the_tape_bound(seed):
    item = generate(seed, max_rng=2)
    assert item.rng_calls <= 2
    tape = RandomTape((Bits(seed % 16, 4), Bits(3, 4)), 4)
    args = [Bits(seed % 256, 8)] if "arg" in str(item.program.partition.params) else []
    msgs = {"d": [Bits(i, 8) for i in range(4)]}
    tr = run_concrete(item.program, initial_state(item.program, "main", args, tape), tape, msgs)
    assert tr.status in ("halt", "fail", "blocked")
    assert tr.error is None or "exhausted" not in tr.error


def test_corpus_covers_every_label_kind():
    kinds = set()
    for item in generate_corpus(60, seed=1):
        part = item.program.partition
        kinds |= {k for k in ("rng", "ops", "events", "attacker_send", "attacker_recv") if getattr(part, k, None)}
    assert kinds == {"rng", "ops", "events", "attacker_send", "attacker_recv"}
