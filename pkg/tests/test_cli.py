"""Command-line interface: exit codes, output formats, corpus plumbing."""

import json

import pytest

from inspectre.cli import main


STRAIGHT = """\
.secret mem 5 0 1
load r0, [5]
storei [6], 1
halt
"""

LEAKY = """\
.secret mem 5 0 1
.mem 6 0
load r0, [5]
load r1, [r0]
halt
"""


@pytest.fixture
def straight(tmp_path):
    p = tmp_path / "straight.isa"
    p.write_text(STRAIGHT)
    return str(p)


@pytest.fixture
def leaky(tmp_path):
    p = tmp_path / "leaky.isa"
    p.write_text(LEAKY)
    return str(p)


def test_run_emits_json_traces(straight, capsys):
    assert main(["run", straight, "--semantics", "inorder"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    traces = [json.loads(l) for l in lines]
    assert [] in traces                         # prefix closure
    assert max(len(t) for t in traces) >= 2


def test_run_trace_out_file(straight, tmp_path):
    out = tmp_path / "traces.jsonl"
    assert main(["run", straight, "--semantics", "ooo", "--depth", "12",
                 "--trace-out", str(out)]) == 0
    assert out.read_text().strip()


def test_check_ni_secure(straight, capsys):
    rc = main(["check", straight, "--property", "ni", "--depth", "12",
               "--predictor", "br"])
    assert rc == 0
    verdict = json.loads(capsys.readouterr().out)
    assert verdict["verdict"] == "Secure-up-to-depth"


def test_check_ct_insecure_exit_code(leaky, capsys):
    rc = main(["check", leaky, "--property", "isa-ct"])
    assert rc == 1
    assert json.loads(capsys.readouterr().out)["verdict"] == "Insecure"


def test_check_consistency(straight, capsys):
    rc = main(["check", straight, "--property", "consistency",
               "--semantics", "ooo", "--depth", "20", "--samples", "10"])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "Consistent"


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.isa"
    bad.write_text("frobnicate r0\n")
    assert main(["run", str(bad)]) == 2
    assert "parse error" in capsys.readouterr().err


def test_budget_exit_code(leaky, capsys):
    rc = main(["check", leaky, "--property", "ni", "--predictor", "br",
               "--depth", "30", "--budget", "10"])
    assert rc == 3
    assert "budget" in capsys.readouterr().err


def test_corpus_list(capsys):
    assert main(["corpus", "list"]) == 0
    out = capsys.readouterr().out
    assert "spectre_pht" in out and "retpoline" in out


def test_corpus_verify_single(capsys):
    assert main(["corpus", "verify", "spectre_ooo_cmov"]) == 0
    out = capsys.readouterr().out
    assert "ok" in out and "FAIL" not in out
