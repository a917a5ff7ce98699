import json
import os
import subprocess
import sys

import pytest

from birproto.cli import main
from birproto.iml import alpha_equal, parse_process

from helpers import EXAMPLES, RUNNING

CLIENT = os.path.join(RUNNING, "client.bir")
SERVER = os.path.join(RUNNING, "server.bir")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_prints_canonical_form(capsys):
    code, out, _ = run(capsys, "parse", CLIENT)
    assert code == 0
    assert out.startswith("block client:")
    code, out, _ = run(capsys, "parse", os.path.join(RUNNING, "eavesdrop.iml"))
    assert code == 0 and "run client(key)" in out


def test_parse_error_exit_code_and_diagnostic(capsys, tmp_path):
    bad = tmp_path / "bad.bir"
    bad.write_text("block a:\n  X := (1:8\n")
    code, out, err = run(capsys, "parse", str(bad))
    assert code == 2 and out == ""
    diag = json.loads(err)
    assert diag["error"] == "parse" and diag["type"] == "ParseError"


def test_missing_file_is_a_generic_error(capsys, tmp_path):
    code, _, err = run(capsys, "parse", str(tmp_path / "nope.bir"))
    assert code == 1
    assert json.loads(err)["error"] == "io"


def test_run_with_tape_file(capsys, tmp_path):
    tape = tmp_path / "tape.hex"
    tape.write_text("3")
    code, out, _ = run(capsys, "run", CLIENT, "--arg", "9", "--tape", str(tape), "--k", "1")
    assert code == 0
    assert "ev send" in out or "send" in out
    assert out.rstrip().endswith("status: halt")


def test_run_blocked_receive_is_stuck(capsys):
    code, out, _ = run(capsys, "run", SERVER, "--arg", "2")
    assert code == 3
    assert "blocked" in out


def test_run_delivers_messages(capsys):
    code, out, _ = run(capsys, "run", SERVER, "--arg", "2", "--msg", "d=555", "--format", "json")
    assert code == 0
    data = json.loads(out)
    assert data["status"] == "halt"
    assert any("bad" in e for e in data["events"])


def test_empty_program_runs_to_nothing(capsys, tmp_path):
    empty = tmp_path / "empty.bir"
    empty.write_text("")
    code, out, _ = run(capsys, "run", str(empty))
    assert code == 0 and out == ""


def test_step_bound_is_reported(capsys, tmp_path):
    spin = tmp_path / "spin.bir"
    spin.write_text("block a:\n  jmp @a\n")
    code, out, _ = run(capsys, "run", str(spin), "--depth", "10")
    assert code == 4


def test_extract_matches_golden_file(capsys):
    code, out, _ = run(capsys, "extract", os.path.join(EXAMPLES, "xor_client.bir"))
    assert code == 0
    with open(os.path.join(EXAMPLES, "xor_client.iml")) as f:
        assert alpha_equal(parse_process(out), parse_process(f.read()))


@pytest.mark.parametrize("fmt", ["text", "json", "dot"])
def test_symexec_formats(capsys, fmt):
    code, out, _ = run(capsys, "symexec", CLIENT, "--format", fmt)
    assert code == 0
    if fmt == "json":
        assert json.loads(out)["nodes"]
    elif fmt == "dot":
        assert out.startswith("digraph")
    else:
        assert "enc" in out


def test_mixed_runs(capsys):
    iml = os.path.join(RUNNING, "eavesdrop.iml")
    code, out, _ = run(capsys, "mixed", iml, "--prog", CLIENT, "--prog", SERVER, "--k", "1", "--seed", "3")
    assert code == 0 and "status:" in out
    code, out, _ = run(capsys, "mixed", iml, "--prog", CLIENT, "--prog", SERVER, "--k", "1",
                       "--flavor", "sbir", "--format", "json")
    assert code == 0
    assert json.loads(out)["paths"]


def test_check_and_insecurity(capsys):
    iml = os.path.join(RUNNING, "eavesdrop.iml")
    auth = os.path.join(RUNNING, "auth.json")
    code, out, _ = run(capsys, "check", iml, "--prog", CLIENT, "--prog", SERVER, "--k", "1",
                       "--property", auth, "--format", "json")
    assert code == 0
    assert json.loads(out) == {"insec_program": "0/1", "insec_model": "0/1", "holds": True, "partial": False}
    replay = os.path.join(RUNNING, "replay.iml")
    code, out, _ = run(capsys, "insec", replay, "--prog", CLIENT, "--prog", SERVER, "--k", "1",
                       "--property", os.path.join(RUNNING, "forbid_bad.json"), "--layer", "bir")
    assert code == 5
    assert "insec = 1/1" in out


def test_difftest_on_shipped_corpus(capsys):
    code, out, _ = run(capsys, "difftest", os.path.join(EXAMPLES, "corpus"), "--seed", "7", "--tapes", "2")
    assert code == 0
    assert out.rstrip().endswith("120/120 ok")


def test_difftest_on_a_single_item(capsys, tmp_path):
    for ext in ("bir", "iml"):
        with open(os.path.join(EXAMPLES, "corpus", f"prog_0000.{ext}")) as f:
            (tmp_path / f"prog_0000.{ext}").write_text(f.read())
    code, out, _ = run(capsys, "difftest", str(tmp_path), "--tapes", "1")
    assert code == 0
    assert out.rstrip().endswith("2/2 ok")
    assert "prog_0000 inclusion: ok" in out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "birproto", "parse", os.path.join(RUNNING, "replay.iml")],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "conc(0x05, z)" in r.stdout
