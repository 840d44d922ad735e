"""CLI subcommands: exit codes, output shapes, pipe safety."""

import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from crtc.cli import main

ROOT = Path(__file__).resolve().parent.parent


def run_cli(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_buildable_corpus(tmp_path, capsys):
    (tmp_path / "a.toy").write_text("class A { int m() { return 1; } }")
    code, out, _ = run_cli(["check", str(tmp_path)], capsys)
    assert code == 0
    assert "a.toy: buildable" in out


def test_check_reports_mistyped_param(tmp_path, capsys):
    (tmp_path / "a.toy").write_text(
        "class A { int Foo(in newParam, int x) { return x; } }")
    code, out, _ = run_cli(["check", str(tmp_path)], capsys)
    assert code == 1
    assert "UnknownType" in out and "18..20" in out


def test_check_empty_directory(tmp_path, capsys):
    code, out, _ = run_cli(["check", str(tmp_path)], capsys)
    assert code == 0 and out == ""


def test_deps_output_sorted(tmp_path, capsys):
    (tmp_path / "a.toy").write_text("class A { int Foo(int x) { return x; } }")
    (tmp_path / "b.toy").write_text("class B { int UsingFoo() { return Foo(1); } }")
    code, out, _ = run_cli(["deps", "--corpus", str(tmp_path)], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert "A/Foo -> {B/UsingFoo}" in lines
    assert "B/UsingFoo -> {}" in lines
    assert lines == sorted(lines)


def test_deps_single_element_and_unbuildable(tmp_path, capsys):
    (tmp_path / "a.toy").write_text("class A { int Foo(int x) { return x; } }")
    code, out, _ = run_cli(["deps", "--corpus", str(tmp_path), "A/Foo"], capsys)
    assert code == 0 and out.strip() == "A/Foo -> {}"
    (tmp_path / "bad.toy").write_text("class Z { int m() { return nah; } }")
    code, _, err = run_cli(["deps", "--corpus", str(tmp_path)], capsys)
    assert code == 2 and "not buildable" in err


def test_sim_golden_exits_zero(capsys):
    code, out, _ = run_cli(
        ["sim", "--scenario", str(ROOT / "scenarios" / "usecase_bob_john.crtcs")],
        capsys)
    assert code == 0


def test_sim_trace_prints_lines(capsys):
    code, out, _ = run_cli(
        ["sim", "--scenario", str(ROOT / "scenarios" / "usecase_bob_john.crtcs"),
         "--trace"], capsys)
    assert code == 0
    assert out.count("\n") > 20
    assert '"ev":"corpus"' in out


def test_sim_failing_assert_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.crtcs"
    bad.write_text('client a\n'
                   'file f.toy "class A { }"\n'
                   'at 1 assert text a f.toy "not this"\n')
    code, out, _ = run_cli(["sim", "--scenario", str(bad)], capsys)
    assert code == 1
    assert "assertion failed" in out


def test_sim_syntax_error_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.crtcs"
    bad.write_text("at one a insert\n")
    code, _, err = run_cli(["sim", "--scenario", str(bad)], capsys)
    assert code == 2 and "line 1" in err


def test_sim_fuzz_exits_zero(capsys):
    code, out, _ = run_cli(["sim", "--fuzz", "3", "--seed", "7", "--clients", "2",
                            "--steps", "20"], capsys)
    assert code == 0
    assert out.count(": ok") == 3


def test_serve_unbuildable_corpus_exits_two(tmp_path, capsys):
    (tmp_path / "a.toy").write_text("class A { int m() { return nah; } }")
    code, _, err = run_cli(["serve", "--corpus", str(tmp_path)], capsys)
    assert code == 2
    assert "not buildable" in err


def test_serve_missing_corpus_exits_two(tmp_path, capsys):
    code, _, err = run_cli(["serve", "--corpus", str(tmp_path / "nope")], capsys)
    assert code == 2


def test_serve_occupied_port_exits_two(tmp_path, capsys):
    (tmp_path / "a.toy").write_text("class A { }")
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    port = blocker.getsockname()[1]
    blocker.listen(1)
    try:
        code, _, err = run_cli(["serve", "--corpus", str(tmp_path),
                                "--port", str(port), "--ui-port", str(port)], capsys)
        assert code == 2
    finally:
        blocker.close()


def test_client_usage_error(capsys):
    code, _, err = run_cli(["client", "--server", "nocolon", "--name", "x",
                            "--script", "/nonexistent"], capsys)
    assert code == 2


def test_console_script_end_to_end(tmp_path):
    (tmp_path / "a.toy").write_text("class A { int m() { return 1; } }")
    proc = subprocess.run(
        [sys.executable, "-m", "crtc.cli", "check", str(tmp_path)],
        capture_output=True, text=True, cwd=ROOT)
    assert proc.returncode == 0
    assert "buildable" in proc.stdout
