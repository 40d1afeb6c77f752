from __future__ import annotations

import datetime as dt
import hashlib
import logging
import os
import secrets
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from ..encoding import TYPE_SEALED_MSK, Reader, frame
from ..errors import InvalidRange, MalformedEncoding, NotInitialized, SlieError
from ..lifecycle import (
    DEFAULT_POLICY,
    Eligibility,
    KeyRecord,
    Refreshed,
    RolePolicy,
    epoch_patterns,
    new_key_id,
    refresh,
    sweep_expired,
    utc_date,
)
from ..pairing import Rng, pair, wipe
from ..pattern import Pattern, SlotLayout, pattern_from_uri
from ..wkdibe import MasterSecret, PublicParams, key_derive, pack_key_bundle, setup
from .store import JournalStore

log = logging.getLogger(__name__)

PARAMS_FILE = "params.bin"
MSK_FILE = "msk.sealed"
STORE_DIR = "store"

SCRYPT_N = 2**14


class BadPassphrase(SlieError):
    http_status = 500


def seal_msk(msk: MasterSecret, passphrase: str, n: int = SCRYPT_N) -> bytes:
    salt, nonce = os.urandom(16), os.urandom(12)
    key = Scrypt(salt=salt, length=32, n=n, r=8, p=1).derive(passphrase.encode())
    plain = bytearray(msk.to_bytes())
    try:
        sealed = ChaCha20Poly1305(key).encrypt(nonce, bytes(plain), b"slie:msk:v1")
    finally:
        wipe(plain)
    return frame(TYPE_SEALED_MSK, salt + struct.pack(">I", n) + nonce + sealed)


def unseal_msk(blob: bytes, passphrase: str) -> MasterSecret:
    r = Reader(blob, TYPE_SEALED_MSK)
    salt, n, nonce, sealed = r.take(16), r.u32(), r.take(12), r.rest()
    key = Scrypt(salt=salt, length=32, n=n, r=8, p=1).derive(passphrase.encode())
    try:
        plain = bytearray(ChaCha20Poly1305(key).decrypt(nonce, sealed, b"slie:msk:v1"))
    except InvalidTag:
        raise BadPassphrase("cannot unseal master secret: wrong passphrase or corrupt file") from None
    try:
        return MasterSecret.from_bytes(bytes(plain))
    finally:
        wipe(plain)


def _atomic_write(path: Path, data: bytes, mode: int = 0o644) -> None:
    tmp = path.with_name(path.name + ".tmp")
    fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, mode)
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass(frozen=True)
class Issued:
    record: KeyRecord
    key_blob: bytes = field(repr=False)

    @property
    def key_id(self) -> str:
        return self.record.key_id

    @property
    def expiry(self) -> int:
        return self.record.expiry


class Authority:
    """Owns params and the master secret; issues, refreshes and sweeps keys."""

    def __init__(
        self,
        params: PublicParams,
        msk: MasterSecret,
        store: JournalStore,
        policy: RolePolicy = DEFAULT_POLICY,
        rng: Optional[Rng] = None,
        clock: Callable[[], float] = time.time,
    ):
        self.params = params
        self._msk = msk
        self.store = store
        self.policy = policy
        self.rng = rng or secrets.SystemRandom()
        self.clock = clock
        self._params_bytes = params.to_bytes()
        store.clock = clock
        # refresh and sweep read-modify-write records; they serialize here
        self._rmw = threading.Lock()

    def __repr__(self) -> str:
        return f"Authority(layout={self.params.layout}, records={len(self.store)})"

    @classmethod
    def initialize(
        cls,
        state_dir: str | Path,
        passphrase: str,
        layout: SlotLayout = SlotLayout(),
        rng: Optional[Rng] = None,
        **kwargs,
    ) -> Authority:
        state = Path(state_dir)
        state.mkdir(parents=True, exist_ok=True)
        if (state / PARAMS_FILE).exists():
            raise FileExistsError(f"{state} already holds an authority")
        rng = rng or secrets.SystemRandom()
        params, msk = setup(layout, rng)
        _atomic_write(state / MSK_FILE, seal_msk(msk, passphrase), 0o600)
        # params last: their presence marks a complete initialization
        _atomic_write(state / PARAMS_FILE, params.to_bytes())
        log.info("initialized authority in %s with layout %s", state, layout)
        return cls(params, msk, JournalStore(state / STORE_DIR), rng=rng, **kwargs)

    @classmethod
    def open(cls, state_dir: str | Path, passphrase: str, **kwargs) -> Authority:
        state = Path(state_dir)
        if not (state / PARAMS_FILE).exists() or not (state / MSK_FILE).exists():
            raise NotInitialized(f"no authority state in {state}")
        params = PublicParams.from_bytes((state / PARAMS_FILE).read_bytes())
        msk = unseal_msk((state / MSK_FILE).read_bytes(), passphrase)
        if pair(params.g, msk.element) != params.z:
            raise MalformedEncoding("master secret does not belong to these params")
        return cls(params, msk, JournalStore(state / STORE_DIR), **kwargs)

    def now(self) -> int:
        return int(self.clock())

    def params_bytes(self) -> bytes:
        return self._params_bytes

    def _derive(self, base: Pattern, expiry: int, now: int, window: Optional[tuple[dt.date, dt.date]]) -> bytes:
        if window is None:
            return key_derive(self.params, self._msk, base, expiry, self.rng, now).to_bytes()
        keys = [
            key_derive(self.params, self._msk, p, expiry, self.rng, now)
            for p in epoch_patterns(base, *window)
        ]
        return pack_key_bundle(keys)

    def issue(
        self,
        subject: str,
        role: str,
        uri: str,
        epoch_range: Optional[tuple[dt.date, dt.date]] = None,
    ) -> Issued:
        validity = self.policy.validity(role)
        base = pattern_from_uri(uri, self.params.layout)
        if epoch_range is not None:
            if self.params.layout.time_slots == 0:
                raise InvalidRange("time-locked keys need a layout with time slots")
            if epoch_range[0] > epoch_range[1]:
                raise InvalidRange("epoch range start is after its end")
        now = self.now()
        expiry = now + int(validity.total_seconds())
        blob = self._derive(base, expiry, now, epoch_range)
        record = KeyRecord(
            key_id=new_key_id(),
            subject=subject,
            role=role,
            pattern=base,
            sk_digest=hashlib.sha256(blob).hexdigest(),
            issued_at=now,
            expiry=expiry,
            uri=uri,
            time_locked=epoch_range is not None,
        )
        self.store.commit(record, "issued", now)
        log.info("issued key %s to %s as %s, expires %d", record.key_id, subject, role, expiry)
        return Issued(record, blob)

    def refresh(self, key_id: str, evidence: Eligibility) -> Refreshed:
        def issue(rec: KeyRecord, expiry: int, at: int) -> tuple[bytes, str]:
            window = (utc_date(at), utc_date(expiry)) if rec.time_locked else None
            blob = self._derive(rec.pattern, expiry, at, window)
            return blob, hashlib.sha256(blob).hexdigest()

        with self._rmw:
            record = self.store.get(key_id)
            now = self.now()
            result = refresh(record, self.policy, now, evidence, issue)
            self.store.commit(result.record, "refreshed", now)
        log.info("refreshed key %s -> %s, expires %d", key_id, result.record.key_id, result.record.expiry)
        return result

    def get(self, key_id: str) -> KeyRecord:
        return self.store.get(key_id)

    def sweep(self) -> list[str]:
        with self._rmw:
            swept = sweep_expired(self.store, self.now())
        if swept:
            log.info("swept %d expired keys", len(swept))
        return swept

    def close(self) -> None:
        self.store.close()
