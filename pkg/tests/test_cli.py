import csv
import io
import random
import stat

import pytest
from click.testing import CliRunner

from slie.authority.core import unseal_msk
from slie.bench import SUMMARY_COLUMNS
from slie.cli import cli, parse_epoch, parse_instant, run
from slie.errors import EXIT_CRYPTO, EXIT_EXPIRED, EXIT_USAGE
from slie.pattern import pattern_from_uri
from slie.wkdibe import PublicParams, key_derive

ENV = {"SLIE_MSK_PASSPHRASE": "pw"}


@pytest.fixture
def runner():
    return CliRunner(env=ENV)


@pytest.fixture
def workspace(tmp_path, runner, monkeypatch):
    monkeypatch.chdir(tmp_path)
    r = runner.invoke(cli, ["setup", "--uri-slots", "6", "--time-slots", "3", "--out-params", "p.bin",
                            "--out-msk", "m.sealed"])
    assert r.exit_code == 0, r.output
    r = runner.invoke(cli, ["keygen", "--pattern", "/HC/Data", "--role", "nurse", "--params", "p.bin",
                            "--msk", "m.sealed", "--out", "k.key"])
    assert r.exit_code == 0, r.output
    return tmp_path


def invoke(runner, *args):
    return runner.invoke(cli, list(args))


def assert_one_line_error(result, code):
    assert result.exit_code == code, result.output
    lines = result.stderr.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("slie: error[")


def test_encrypt_decrypt_round_trip(workspace, runner):
    data = random.Random(1).randbytes(1024)
    (workspace / "in.bin").write_bytes(data)
    r = invoke(runner, "encrypt", "--pattern", "/HC/Data/EHR/full", "--in", "in.bin", "--out", "in.slie",
               "--params", "p.bin")
    assert r.exit_code == 0, r.output
    r = invoke(runner, "decrypt", "--key", "k.key", "--in", "in.slie", "--out", "out.bin", "--params", "p.bin")
    assert r.exit_code == 0, r.output
    assert (workspace / "out.bin").read_bytes() == data


def test_secret_files_are_owner_only(workspace):
    for name in ("k.key", "m.sealed"):
        assert stat.S_IMODE((workspace / name).stat().st_mode) == 0o600


def test_decrypt_with_expired_key(workspace, runner):
    params = PublicParams.from_bytes((workspace / "p.bin").read_bytes())
    msk = unseal_msk((workspace / "m.sealed").read_bytes(), "pw")
    sk = key_derive(params, msk, pattern_from_uri("/HC", params.layout), 1_700_000_000, random.Random(2),
                    now=1_690_000_000)
    (workspace / "old.key").write_bytes(sk.to_bytes())
    (workspace / "in.bin").write_bytes(b"x")
    invoke(runner, "encrypt", "--pattern", "/HC/a", "--in", "in.bin", "--out", "c.slie", "--params", "p.bin")
    r = invoke(runner, "decrypt", "--key", "old.key", "--in", "c.slie", "--out", "o.bin", "--params", "p.bin")
    assert_one_line_error(r, EXIT_EXPIRED)
    assert "1700000000" in r.stderr and "2023-11-14T22:13:20Z" in r.stderr
    assert not (workspace / "o.bin").exists()


def test_tampered_ciphertext_exit_2(workspace, runner):
    (workspace / "in.bin").write_bytes(b"hello")
    invoke(runner, "encrypt", "--pattern", "/HC/Data/x", "--in", "in.bin", "--out", "c.slie", "--params", "p.bin")
    raw = bytearray((workspace / "c.slie").read_bytes())
    raw[-3] ^= 0x40
    (workspace / "c.slie").write_bytes(bytes(raw))
    r = invoke(runner, "decrypt", "--key", "k.key", "--in", "c.slie", "--out", "o.bin", "--params", "p.bin")
    assert_one_line_error(r, EXIT_CRYPTO)
    assert "AuthenticationFailure" in r.stderr
    assert not (workspace / "o.bin").exists()


def test_wrong_pattern_exit_2(workspace, runner):
    (workspace / "in.bin").write_bytes(b"hello")
    invoke(runner, "encrypt", "--pattern", "/HC/Other", "--in", "in.bin", "--out", "c.slie", "--params", "p.bin")
    r = invoke(runner, "decrypt", "--key", "k.key", "--in", "c.slie", "--out", "o.bin", "--params", "p.bin")
    assert_one_line_error(r, EXIT_CRYPTO)


def test_delegate(workspace, runner):
    (workspace / "in.bin").write_bytes(b"record")
    r = invoke(runner, "delegate", "--key", "k.key", "--pattern", "/HC/Data/EHR", "--out", "c.key",
               "--params", "p.bin", "--expiry", "1d")
    assert r.exit_code == 0, r.output
    invoke(runner, "encrypt", "--pattern", "/HC/Data/EHR/7", "--in", "in.bin", "--out", "c.slie", "--params", "p.bin")
    r = invoke(runner, "decrypt", "--key", "c.key", "--in", "c.slie", "--out", "o.bin", "--params", "p.bin")
    assert r.exit_code == 0 and (workspace / "o.bin").read_bytes() == b"record"
    r = invoke(runner, "delegate", "--key", "c.key", "--pattern", "/HC", "--out", "x.key", "--params", "p.bin")
    assert_one_line_error(r, EXIT_CRYPTO)
    r = invoke(runner, "delegate", "--key", "k.key", "--pattern", "/HC/Data/a", "--out", "x.key",
               "--params", "p.bin", "--expiry", "30d")
    assert_one_line_error(r, EXIT_USAGE)


def test_time_locked_flow(workspace, runner):
    r = invoke(runner, "keygen", "--pattern", "/HC", "--role", "doctor", "--params", "p.bin", "--msk", "m.sealed",
               "--out", "t.key", "--epochs", "2026-01-30:2026-02-28")
    assert r.exit_code == 0, r.output
    (workspace / "in.bin").write_bytes(b"vitals")
    invoke(runner, "encrypt", "--pattern", "/HC/ward", "--epoch", "2026-02-14", "--in", "in.bin", "--out", "a.slie",
           "--params", "p.bin")
    r = invoke(runner, "decrypt", "--key", "t.key", "--in", "a.slie", "--out", "a.out", "--params", "p.bin")
    assert r.exit_code == 0, r.output
    invoke(runner, "encrypt", "--pattern", "/HC/ward", "--epoch", "2026-03-01", "--in", "in.bin", "--out", "b.slie",
           "--params", "p.bin")
    r = invoke(runner, "decrypt", "--key", "t.key", "--in", "b.slie", "--out", "b.out", "--params", "p.bin")
    assert_one_line_error(r, EXIT_CRYPTO)


def test_inspect_needs_no_secrets(workspace, runner):
    (workspace / "in.bin").write_bytes(b"abc")
    invoke(runner, "encrypt", "--pattern", "/HC/Data", "--in", "in.bin", "--out", "c.slie", "--params", "p.bin")
    (workspace / "m.sealed").unlink()
    r = invoke(runner, "inspect", "--in", "c.slie")
    assert r.exit_code == 0
    assert "type: hybrid-ciphertext" in r.stdout and "payload_bytes: 3" in r.stdout and "pattern: [" in r.stdout
    r = invoke(runner, "inspect", "--in", "k.key")
    assert "expiry: " in r.stdout and "free_slots: 7" in r.stdout
    r = invoke(runner, "inspect", "--in", "p.bin")
    assert "layout: 6+3" in r.stdout


def test_inspect_does_not_parse_group_elements(workspace, runner, monkeypatch):
    import slie.pairing as pg

    def boom(*a, **k):
        raise AssertionError("secret element parsed")

    monkeypatch.setattr(pg, "g2_from_bytes", boom)
    monkeypatch.setattr(pg, "g1_from_bytes", boom)
    r = invoke(runner, "inspect", "--in", "k.key")
    assert r.exit_code == 0, r.output


@pytest.mark.parametrize("args", [
    ["bogus"],
    ["encrypt", "--pattern", "/x"],
    ["encrypt", "--pattern", "/x", "--in", "p.bin", "--out", "o"],
    ["encrypt", "--pattern", "/x", "--in", "p.bin", "--out", "o", "--params", "p.bin", "--authority", "http://h"],
    ["keygen", "--pattern", "/x", "--role", "nurse", "--out", "o"],
    ["keygen", "--pattern", "/x", "--role", "wizard", "--out", "o", "--params", "p.bin", "--msk", "m.sealed"],
    ["keygen", "--pattern", "/x", "--role", "nurse", "--out", "o", "--params", "p.bin", "--msk", "m.sealed",
     "--authority", "http://h"],
    ["keygen", "--pattern", "/x", "--role", "nurse", "--out", "o", "--params", "p.bin", "--msk", "m.sealed",
     "--expiry", "soon"],
    ["decrypt", "--key", "missing.key", "--in", "x", "--out", "y", "--params", "p.bin"],
    ["bench", "--iterations", "3"],
    ["bench", "--sizes", "0"],
])
def test_usage_errors_exit_1(workspace, runner, args):
    assert_one_line_error(invoke(runner, *args), EXIT_USAGE)


def test_inspect_garbage_exit_2(workspace, runner):
    (workspace / "junk").write_bytes(b"not a slie file")
    assert_one_line_error(invoke(runner, "inspect", "--in", "junk"), EXIT_CRYPTO)


def test_bad_passphrase(workspace):
    r = CliRunner(env={"SLIE_MSK_PASSPHRASE": "nope"}).invoke(
        cli, ["keygen", "--pattern", "/x", "--role", "nurse", "--out", "o", "--params", "p.bin", "--msk", "m.sealed"])
    assert_one_line_error(r, EXIT_USAGE)
    assert "BadPassphrase" in r.stderr


def test_bench_csv_has_summary_header(runner):
    r = invoke(runner, "bench", "--sizes", "1k,2k", "--algorithms", "slie")
    assert r.exit_code == 0, r.output
    rows = list(csv.reader(io.StringIO(r.stdout)))
    assert rows[0] == SUMMARY_COLUMNS
    assert rows[0][1] == "Key Creation Time (ms)" and rows[0][2] == "Encryption Time (ms)"
    assert [row[0] for row in rows[1:]] == ["1KB", "2KB"]


def test_bench_other_formats(runner, tmp_path):
    r = invoke(runner, "bench", "--sizes", "1k", "--algorithms", "chacha20", "--format", "rows")
    assert r.stdout.splitlines()[0].startswith("algorithm,operation,size_bytes")
    out = tmp_path / "b.md"
    r = invoke(runner, "bench", "--sizes", "1k", "--algorithms", "slie,chacha20", "--format", "md", "--out", str(out))
    assert r.exit_code == 0 and "| ChaCha20 | None |" in out.read_text()


def test_run_returns_code(capsys):
    assert run(["inspect"]) == EXIT_USAGE
    assert "Missing option" in capsys.readouterr().err
    assert run(["--help"]) == 0


def test_parsers():
    assert parse_instant("2d", now=100) == 100 + 2 * 86400
    assert parse_instant("3h", now=0) == 3 * 3600
    assert parse_instant("2026-01-01T00:00:00Z") == 1767225600
    assert parse_instant("2026-01-01") == 1767225600 + 86399
    assert parse_epoch("2026-02").month == 2
    with pytest.raises(Exception):
        parse_epoch("2026-02-30")


def test_authority_mode(tmp_path, runner, monkeypatch):
    from fastapi.testclient import TestClient

    import slie.cli as cli_mod
    from slie.authority import Authority, create_app
    from slie.client import AuthorityClient

    authority = Authority.initialize(tmp_path / "state", "pw")
    transport = TestClient(create_app(authority, "tok"))._transport
    monkeypatch.setattr(cli_mod, "_client", lambda url, token=None: AuthorityClient(url, token, transport=transport))
    monkeypatch.chdir(tmp_path)
    r = invoke(runner, "keygen", "--pattern", "/HC/Data", "--role", "nurse", "--subject", "alice",
               "--authority", "http://auth", "--token", "tok", "--out", "a.key")
    assert r.exit_code == 0, r.output
    assert "key_id: " in r.stdout
    (tmp_path / "in.bin").write_bytes(b"via authority")
    r = invoke(runner, "encrypt", "--pattern", "/HC/Data/r", "--in", "in.bin", "--out", "c.slie",
               "--authority", "http://auth")
    assert r.exit_code == 0, r.output
    r = invoke(runner, "decrypt", "--key", "a.key", "--in", "c.slie", "--out", "o.bin", "--authority", "http://auth")
    assert r.exit_code == 0 and (tmp_path / "o.bin").read_bytes() == b"via authority"
    r = invoke(runner, "keygen", "--pattern", "/HC", "--role", "nurse", "--subject", "a",
               "--authority", "http://auth", "--token", "wrong", "--out", "b.key")
    assert_one_line_error(r, EXIT_USAGE)
    assert "Unauthorized" in r.stderr
    authority.close()
