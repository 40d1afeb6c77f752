"""``slie`` command-line tool.

Key material comes either from local files (``--params``/``--msk``) or from
a running key authority (``--authority``); the two are mutually exclusive.
Every failure prints one ``slie: error[Code]: message`` line on stderr and
exits 1 (usage), 2 (crypto) or 3 (expired key).
"""
from __future__ import annotations

import datetime as dt
import logging
import os
import re
import secrets
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import click

from . import pairing as pg
from .authority.core import seal_msk, unseal_msk
from .encoding import (
    TYPE_HYBRID_CT,
    TYPE_KEM_CT,
    TYPE_KEY_BUNDLE,
    TYPE_NAMES,
    TYPE_PARAMS,
    TYPE_SECRET_KEY,
    Reader,
    peek_type,
)
from .envelope import NONCE_SIZE, encrypt_payload
from .errors import EXIT_USAGE, SlieError
from .lifecycle import DEFAULT_POLICY, RolePolicy, checked_decrypt, epoch_patterns
from .pattern import Pattern, SlotLayout, TimeEpoch, extends, pattern_from_uri
from .wkdibe import PublicParams, delegate, key_derive, load_secret_keys, pack_key_bundle, setup

log = logging.getLogger("slie")

PASSPHRASE_ENV = "SLIE_MSK_PASSPHRASE"
TOKEN_ENV = "SLIE_ADMIN_TOKEN"
AUTHORITY_ENV = "SLIE_AUTHORITY"


class UsageError(SlieError):
    pass


def _diagnostic(code: str, message: str) -> str:
    return f"slie: error[{code}]: {' '.join(message.split())}"


class SlieGroup(click.Group):
    """Maps every failure to one stderr line and the documented exit code."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args=args, prog_name=prog_name or "slie", complete_var=complete_var,
                              standalone_mode=False, **extra)
            code = rv if isinstance(rv, int) else 0
        except click.exceptions.Exit as exc:
            code = exc.exit_code
        except click.exceptions.Abort:
            click.echo(_diagnostic("Aborted", "interrupted"), err=True)
            code = EXIT_USAGE
        except click.ClickException as exc:
            click.echo(_diagnostic("UsageError", exc.format_message()), err=True)
            code = EXIT_USAGE
        except SlieError as exc:
            click.echo(_diagnostic(exc.code, exc.message), err=True)
            code = exc.exit_code
        except OSError as exc:
            click.echo(_diagnostic(type(exc).__name__, f"{exc.strerror or exc}: {exc.filename or ''}"), err=True)
            code = EXIT_USAGE
        if standalone_mode:
            sys.exit(code)
        return code


# ---- input parsing -------------------------------------------------------

_DURATION = re.compile(r"^(\d+)([dh])$")


def parse_instant(text: str, now: Optional[int] = None) -> int:
    """``Nd``/``Nh`` from now, an ISO date (end of that UTC day) or an ISO datetime."""
    now = int(time.time()) if now is None else now
    m = _DURATION.match(text.strip())
    if m:
        n, unit = int(m.group(1)), m.group(2)
        return now + n * (86400 if unit == "d" else 3600)
    try:
        if len(text) == 10:
            day = dt.date.fromisoformat(text)
            return int(dt.datetime.combine(day, dt.time(23, 59, 59), dt.timezone.utc).timestamp())
        moment = dt.datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise UsageError(f"expected an ISO-8601 date/time or Nd/Nh duration, got {text!r}") from None
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=dt.timezone.utc)
    return int(moment.timestamp())


def parse_epoch(text: str) -> TimeEpoch:
    parts = text.strip().split("-")
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"epoch must be YYYY, YYYY-MM or YYYY-MM-DD, got {text!r}") from None
    if not 1 <= len(nums) <= 3:
        raise UsageError(f"epoch must be YYYY, YYYY-MM or YYYY-MM-DD, got {text!r}")
    return TimeEpoch(*nums)


def parse_window(text: str) -> tuple[dt.date, dt.date]:
    start, sep, end = text.partition(":")
    try:
        window = dt.date.fromisoformat(start), dt.date.fromisoformat(end)
    except ValueError:
        raise UsageError(f"epoch window must be START:END ISO dates, got {text!r}") from None
    if not sep or window[0] > window[1]:
        raise UsageError(f"epoch window must be START:END with START <= END, got {text!r}")
    return window


def iso(ts: int) -> str:
    return dt.datetime.fromtimestamp(ts, dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---- file helpers ----------------------------------------------------------

def write_secret(path: str | Path, data: bytes) -> None:
    """Owner-only file, replaced atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        os.fchmod(fh.fileno(), 0o600)
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_public(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _client(url: str, token: Optional[str] = None):
    from .client import AuthorityClient

    return AuthorityClient(url, token)


def load_params(params_path: Optional[str], authority: Optional[str]) -> PublicParams:
    if params_path and authority:
        raise UsageError("--params and --authority are mutually exclusive")
    if params_path:
        return PublicParams.from_bytes(Path(params_path).read_bytes())
    if authority:
        with _client(authority) as c:
            return c.params()
    raise UsageError("one of --params or --authority is required")


def _passphrase(value: Optional[str], confirm: bool = False) -> str:
    if value:
        return value
    return click.prompt("master secret passphrase", hide_input=True, confirmation_prompt=confirm)


# ---- commands ----------------------------------------------------------------

@click.group(cls=SlieGroup)
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def cli(verbose: int) -> None:
    """Time-bound, wildcard-pattern encryption for healthcare data."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command("setup")
@click.option("--uri-slots", type=int, default=14, show_default=True)
@click.option("--time-slots", type=int, default=3, show_default=True)
@click.option("--out-params", required=True, type=click.Path(dir_okay=False))
@click.option("--out-msk", required=True, type=click.Path(dir_okay=False))
@click.option("--passphrase", envvar=PASSPHRASE_ENV, help=f"Seals the master secret (env {PASSPHRASE_ENV}).")
def setup_cmd(uri_slots, time_slots, out_params, out_msk, passphrase):
    """Generate public parameters and a sealed master secret."""
    layout = SlotLayout(uri_slots, time_slots)
    pw = _passphrase(passphrase, confirm=True)
    params, msk = setup(layout, secrets.SystemRandom())
    write_secret(out_msk, seal_msk(msk, pw))
    write_public(out_params, params.to_bytes())
    click.echo(f"params: {out_params} ({layout.total_slots} slots)")
    click.echo(f"msk: {out_msk} (sealed, mode 0600)")


@cli.command("keygen")
@click.option("--pattern", "uri", required=True, help="URI the key is bound to.")
@click.option("--role", required=True)
@click.option("--expiry", help="ISO date/time or Nd/Nh; default comes from the role policy.")
@click.option("--epochs", help="Time-lock window START:END (ISO dates).")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--msk", "msk_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--passphrase", envvar=PASSPHRASE_ENV)
@click.option("--policy", "policy_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--authority", envvar=AUTHORITY_ENV, help="Key authority base URL.")
@click.option("--token", envvar=TOKEN_ENV, help="Authority admin token.")
@click.option("--subject", help="Subject identifier (authority mode).")
def keygen_cmd(uri, role, expiry, epochs, out, params_path, msk_path, passphrase, policy_path,
               authority, token, subject):
    """Issue a secret key locally or through the key authority."""
    window = parse_window(epochs) if epochs else None
    if authority and (msk_path or params_path):
        raise UsageError("--authority cannot be combined with --params/--msk")
    if authority:
        if expiry:
            raise UsageError("the authority sets expiry from its role policy; drop --expiry")
        if not subject:
            raise UsageError("--subject is required with --authority")
        with _client(authority, token) as c:
            issued = c.issue(subject, role, uri, window)
        write_secret(out, issued["secret_key"])
        click.echo(f"key_id: {issued['key_id']}")
        click.echo(f"expiry: {iso(issued['expiry'])}")
        return
    if not (params_path and msk_path):
        raise UsageError("local keygen needs --params and --msk (or use --authority)")
    params = PublicParams.from_bytes(Path(params_path).read_bytes())
    msk = unseal_msk(Path(msk_path).read_bytes(), _passphrase(passphrase))
    policy = RolePolicy.load(policy_path) if policy_path else DEFAULT_POLICY
    now = int(time.time())
    until = parse_instant(expiry, now) if expiry else now + int(policy.validity(role).total_seconds())
    base = pattern_from_uri(uri, params.layout)
    rng = secrets.SystemRandom()
    if window:
        keys = [key_derive(params, msk, p, until, rng, now) for p in epoch_patterns(base, *window)]
        blob = pack_key_bundle(keys)
    else:
        blob = key_derive(params, msk, base, until, rng, now).to_bytes()
    write_secret(out, blob)
    click.echo(f"expiry: {iso(until)}")


@cli.command("delegate")
@click.option("--key", "key_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pattern", "uri", required=True, help="More specific URI for the child key.")
@click.option("--epoch", help="Pin the child to a YYYY[-MM[-DD]] epoch.")
@click.option("--expiry", help="ISO date/time or Nd/Nh; defaults to the parent's expiry.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--authority", envvar=AUTHORITY_ENV)
def delegate_cmd(key_path, uri, epoch, expiry, out, params_path, authority):
    """Derive a narrower key from a key you hold."""
    params = load_params(params_path, authority)
    parents = load_secret_keys(Path(key_path).read_bytes())
    child = pattern_from_uri(uri, params.layout, parse_epoch(epoch) if epoch else None)
    parent = next((k for k in parents if extends(k.pattern, child)), None)
    if parent is None:
        from .errors import NotAnExtension

        raise NotAnExtension(f"no key in {key_path} can delegate to {uri}")
    until = parse_instant(expiry) if expiry else parent.expiry
    sk = delegate(params, parent, child, until, secrets.SystemRandom())
    write_secret(out, sk.to_bytes())
    click.echo(f"expiry: {iso(until)}")


@cli.command("encrypt")
@click.option("--pattern", "uri", required=True)
@click.option("--epoch", help="Time-lock the ciphertext to a day (YYYY-MM-DD).")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--authority", envvar=AUTHORITY_ENV)
def encrypt_cmd(uri, epoch, in_path, out_path, params_path, authority):
    """Encrypt a file to a URI pattern."""
    params = load_params(params_path, authority)
    stamp = parse_epoch(epoch) if epoch else None
    pattern = pattern_from_uri(uri, params.layout, stamp)
    ct = encrypt_payload(params, pattern, Path(in_path).read_bytes(), secrets.SystemRandom())
    write_public(out_path, ct.to_bytes())


@cli.command("decrypt")
@click.option("--key", "key_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--authority", envvar=AUTHORITY_ENV)
def decrypt_cmd(key_path, in_path, out_path, params_path, authority):
    """Decrypt a file; nothing is written unless authentication succeeds."""
    params = load_params(params_path, authority)
    keys = load_secret_keys(Path(key_path).read_bytes())
    plain = checked_decrypt(params, keys, Path(in_path).read_bytes(), int(time.time()))
    write_secret(out_path, plain)


def _skip_key(r: Reader, lines: list[str], prefix: str = "") -> None:
    # reads only the public parts of a key: group elements are skipped unparsed
    pattern, offset = Pattern.read(r.data, r.pos)
    r.pos = offset
    r.take(pg.G2_SIZE * (2 + len(pattern.free)))
    expiry, issued = r.u64(), r.u64()
    lines += [
        f"{prefix}pattern: {pattern.describe()}",
        f"{prefix}free_slots: {len(pattern.free)}",
        f"{prefix}issued_at: {iso(issued)}",
        f"{prefix}expiry: {iso(expiry)}",
    ]


def describe_blob(data: bytes) -> list[str]:
    kind = peek_type(data)
    lines = [f"type: {TYPE_NAMES.get(kind, hex(kind))}", f"size: {len(data)}"]
    r = Reader(data, kind)
    if kind == TYPE_HYBRID_CT:
        header = r.take(r.u32())
        r.take(NONCE_SIZE)
        sealed = r.u64()
        hr = Reader(header, TYPE_KEM_CT)
        pattern, _ = Pattern.read(hr.data, hr.pos)
        lines += [
            f"header_bytes: {len(header)}",
            f"pattern: {pattern.describe()}",
            f"layout: {pattern.layout.uri_slots}+{pattern.layout.time_slots}",
            f"payload_bytes: {sealed - 16}",
        ]
    elif kind == TYPE_SECRET_KEY:
        _skip_key(r, lines)
    elif kind == TYPE_KEY_BUNDLE:
        count = r.u16()
        lines.append(f"keys: {count}")
        for i in range(count):
            size = r.u32()
            sub = Reader(r.take(size), TYPE_SECRET_KEY)
            _skip_key(sub, lines, f"[{i}] ")
    elif kind == TYPE_PARAMS:
        uri_slots, time_slots = r.u16(), r.u16()
        lines.append(f"layout: {uri_slots}+{time_slots}")
    return lines


@cli.command("inspect")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
def inspect_cmd(in_path):
    """Show header, pattern and expiry without touching secret material."""
    for line in describe_blob(Path(in_path).read_bytes()):
        click.echo(line)


@cli.command("bench")
@click.option("--sizes", default="1k,100k,500k,1m,5m,10m", show_default=True)
@click.option("--iterations", type=int, default=10, show_default=True)
@click.option("--algorithms", default="slie,rsa,chacha20", show_default=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "md", "rows"]), default="csv", show_default=True,
              help="csv: one row per size with the SLIE column set; md: tables; rows: long-form CSV.")
@click.option("--rsa-max-size", default="1m", show_default=True, help="Largest payload for the RSA baseline.")
@click.option("--check/--no-check", default=False, help="Also run the linear-scaling check.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
def bench_cmd(sizes, iterations, algorithms, fmt, rsa_max_size, check, out_path):
    """Measure SLIE against RSA-2048/OAEP and ChaCha20-Poly1305."""
    from . import bench

    size_list = [bench.parse_size(s) for s in sizes.split(",") if s.strip()]
    algs = [a.strip() for a in algorithms.split(",") if a.strip()]
    if iterations < bench.MIN_ITERATIONS:
        raise UsageError(f"--iterations must be at least {bench.MIN_ITERATIONS}")

    def progress(row):
        log.info("%s %s %d: %.3f ms", row.algorithm, row.operation, row.size_bytes, row.mean_ms)

    report = bench.run_benchmark(size_list, iterations, algs, bench.parse_size(rsa_max_size), progress=progress)
    text = {"csv": report.to_summary_csv, "md": report.to_markdown, "rows": report.to_csv}[fmt]()
    if out_path:
        write_public(out_path, text.encode())
    else:
        click.echo(text, nl=False)
    if check:
        result = bench.check_scaling(report)
        for note in result.diagnostics:
            click.echo(f"scaling: {note}", err=True)
        if not result.passed:
            return 2


@cli.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--init", is_flag=True, help="Create authority state if the store is empty.")
def serve_cmd(config_path, init):
    """Run the key authority HTTP service."""
    import uvicorn

    from .authority import Authority, AuthorityConfig, create_app

    cfg = AuthorityConfig.load(config_path)
    if not cfg.admin_token:
        raise UsageError(f"an admin token is required ({TOKEN_ENV})")
    if not cfg.passphrase:
        raise UsageError(f"a master secret passphrase is required ({PASSPHRASE_ENV})")
    kw = dict(policy=cfg.role_policy())
    state = Path(cfg.store)
    if init and not (state / "params.bin").exists():
        authority = Authority.initialize(state, cfg.passphrase, SlotLayout(cfg.uri_slots, cfg.time_slots), **kw)
    else:
        authority = Authority.open(state, cfg.passphrase, **kw)
    try:
        uvicorn.run(create_app(authority, cfg.admin_token), host=cfg.host, port=cfg.port, log_level="info")
    finally:
        authority.close()


def run(argv: Optional[Sequence[str]] = None) -> int:
    return cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
