"""Time-bound key lifecycle: expiry checks, refresh, role validity, sweeping.

Expiry is enforced in two ways. Every lifecycle-aware decrypt checks the
key's expiry metadata (advisory: the raw key still decapsulates). In
time-lock mode ciphertexts also carry the day epoch in their time slots and
keys are issued per node of the covering epoch tree, so a key that is not
renewed stops matching new ciphertexts.
"""
from __future__ import annotations

import datetime as dt
import enum
import json
import secrets
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

from .envelope import HybridCiphertext, decrypt_payload, select_key
from .errors import KeyExpired, NewExpiryNotLater, NotEligible, NotFound, StoreUnavailable, UnknownRole
from .pattern import Pattern, TimeEpoch, cover_time_range
from .wkdibe import PublicParams, SecretKey

DAY = 86400
CLOCK_SKEW = 120


class Validity(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"


class KeyStatus(str, enum.Enum):
    ACTIVE = "active"
    EXPIRED = "expired"
    REVOKED = "revoked"


@dataclass(frozen=True)
class Eligibility:
    """Evidence from hospital systems backing a renewal."""

    active_employment: bool = False
    patient_responsibility: bool = False


@dataclass(frozen=True)
class RoleRule:
    days: float
    requires_employment: bool = True
    requires_responsibility: bool = True

    def __post_init__(self):
        if not self.days > 0:
            raise ValueError("role validity must be a positive duration")


_DEFAULT_RULES = {
    "nurse": RoleRule(7),
    "doctor": RoleRule(21),
    "third_party": RoleRule(2, requires_employment=True, requires_responsibility=False),
    "family": RoleRule(1, requires_employment=False, requires_responsibility=True),
}


@dataclass(frozen=True)
class RolePolicy:
    rules: Mapping[str, RoleRule] = field(default_factory=lambda: dict(_DEFAULT_RULES))
    version: int = 1

    def rule(self, role: str) -> RoleRule:
        try:
            return self.rules[role]
        except KeyError:
            raise UnknownRole(f"unknown role {role!r}") from None

    def validity(self, role: str) -> dt.timedelta:
        return dt.timedelta(days=self.rule(role).days)

    def eligible(self, role: str, evidence: Eligibility) -> bool:
        rule = self.rule(role)
        if rule.requires_employment and not evidence.active_employment:
            return False
        if rule.requires_responsibility and not evidence.patient_responsibility:
            return False
        return True

    def to_dict(self) -> dict:
        return {"version": self.version, "roles": {k: asdict(v) for k, v in self.rules.items()}}

    @classmethod
    def from_dict(cls, doc: Mapping) -> RolePolicy:
        version = int(doc.get("version", 1))
        if version != 1:
            raise ValueError(f"unsupported policy version {version}")
        rules = dict(_DEFAULT_RULES)
        for role, spec in doc.get("roles", {}).items():
            rules[role] = RoleRule(**spec)
        return cls(rules, version)

    @classmethod
    def load(cls, path: str | Path) -> RolePolicy:
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_POLICY = RolePolicy()


def default_validity(role: str, policy: RolePolicy = DEFAULT_POLICY) -> dt.timedelta:
    return policy.validity(role)


def new_key_id() -> str:
    return secrets.token_hex(8)


@dataclass(frozen=True)
class KeyRecord:
    key_id: str
    subject: str
    role: str
    pattern: Pattern
    sk_digest: str
    issued_at: int
    expiry: int
    renewal_count: int = 0
    status: KeyStatus = KeyStatus.ACTIVE
    uri: str = ""
    time_locked: bool = False
    lineage: Optional[str] = None
    # (issued_at, expiry, sk_digest) of superseded key material
    history: tuple[tuple[int, int, str], ...] = ()

    def __post_init__(self):
        if self.expiry <= self.issued_at:
            raise ValueError("expiry must be after issued_at")
        if self.renewal_count < 0:
            raise ValueError("renewal_count must be non-negative")

    def to_dict(self) -> dict:
        return {
            "key_id": self.key_id,
            "subject": self.subject,
            "role": self.role,
            "pattern": self.pattern.to_bytes().hex(),
            "sk_digest": self.sk_digest,
            "issued_at": self.issued_at,
            "expiry": self.expiry,
            "renewal_count": self.renewal_count,
            "status": self.status.value,
            "uri": self.uri,
            "time_locked": self.time_locked,
            "lineage": self.lineage,
            "history": [list(h) for h in self.history],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> KeyRecord:
        return cls(
            key_id=d["key_id"],
            subject=d["subject"],
            role=d["role"],
            pattern=Pattern.from_bytes(bytes.fromhex(d["pattern"])),
            sk_digest=d["sk_digest"],
            issued_at=int(d["issued_at"]),
            expiry=int(d["expiry"]),
            renewal_count=int(d["renewal_count"]),
            status=KeyStatus(d["status"]),
            uri=d.get("uri", ""),
            time_locked=bool(d.get("time_locked", False)),
            lineage=d.get("lineage"),
            history=tuple(tuple(h) for h in d.get("history", ())),
        )


def is_expired(record: KeyRecord | SecretKey, now: int) -> Validity:
    """Valid iff ``now <= expiry``; the boundary instant is still valid."""
    return Validity.VALID if now <= record.expiry else Validity.INVALID


class KeyStore(Protocol):
    def get(self, key_id: str) -> KeyRecord: ...

    def records(self) -> list[KeyRecord]: ...

    def commit(self, record: KeyRecord, event: str) -> None: ...


class MemoryStore:
    """In-process store; the authority uses the durable journal store instead."""

    def __init__(self, records: Iterable[KeyRecord] = ()):
        self._records = {r.key_id: r for r in records}
        self._lock = threading.Lock()
        self.events: list[tuple[str, str]] = []
        self.closed = False

    def _check(self) -> None:
        if self.closed:
            raise StoreUnavailable("store is closed")

    def get(self, key_id: str) -> KeyRecord:
        self._check()
        try:
            return self._records[key_id]
        except KeyError:
            raise NotFound(f"no key {key_id!r}") from None

    def records(self) -> list[KeyRecord]:
        self._check()
        with self._lock:
            return list(self._records.values())

    def commit(self, record: KeyRecord, event: str) -> None:
        self._check()
        with self._lock:
            self._records[record.key_id] = record
            self.events.append((event, record.key_id))


# issues key material for (record template, new expiry, now); returns the
# serialized key blob and its digest
Issuer = Callable[[KeyRecord, int, int], tuple[bytes, str]]


@dataclass(frozen=True)
class Refreshed:
    record: KeyRecord
    key_blob: bytes = field(repr=False)
    previous_expiry: int


def refresh(
    record: KeyRecord,
    policy: RolePolicy,
    now: int,
    evidence: Eligibility,
    issue: Issuer,
) -> Refreshed:
    """Re-derive key material with an extended expiry.

    A live record (not past expiry beyond the clock-skew allowance) keeps its
    key_id. An expired record never comes back: a fresh key_id is minted with
    ``lineage`` pointing at the old one.
    """
    if record.status is KeyStatus.REVOKED:
        raise NotEligible(f"key {record.key_id} is revoked")
    if not policy.eligible(record.role, evidence):
        raise NotEligible(f"subject {record.subject!r} is not eligible for renewal as {record.role}")
    new_expiry = now + int(policy.validity(record.role).total_seconds())
    if new_expiry <= record.expiry:
        raise NewExpiryNotLater(f"new expiry {new_expiry} is not after current expiry {record.expiry}")
    blob, digest = issue(record, new_expiry, now)
    lapsed = record.status is KeyStatus.EXPIRED or now > record.expiry + CLOCK_SKEW
    new = replace(
        record,
        key_id=new_key_id() if lapsed else record.key_id,
        lineage=record.key_id if lapsed else record.lineage,
        sk_digest=digest,
        issued_at=now,
        expiry=new_expiry,
        renewal_count=record.renewal_count + 1,
        status=KeyStatus.ACTIVE,
        history=record.history + ((record.issued_at, record.expiry, record.sk_digest),),
    )
    return Refreshed(new, blob, record.expiry)


def sweep_expired(store: KeyStore, now: int) -> list[str]:
    """Mark every active record past its expiry as expired; idempotent."""
    due = [r for r in store.records() if r.status is KeyStatus.ACTIVE and now > r.expiry]
    due.sort(key=lambda r: (r.expiry, r.key_id))
    for r in due:
        store.commit(replace(r, status=KeyStatus.EXPIRED), "swept")
    return [r.key_id for r in due]


def epoch_patterns(base: Pattern, start: dt.date, end: dt.date) -> list[Pattern]:
    """Key patterns for time-lock mode: one per node covering [start, end]."""
    return [base.with_epoch(node) for node in cover_time_range(start, end)]


def day_pattern(base: Pattern, day: dt.date) -> Pattern:
    """Ciphertext pattern for time-lock mode, stamped with ``day``."""
    return base.with_epoch(TimeEpoch.of(day))


def utc_date(ts: int) -> dt.date:
    return dt.datetime.fromtimestamp(ts, dt.timezone.utc).date()


def checked_decrypt(
    params: PublicParams,
    keys: Sequence[SecretKey],
    ct: HybridCiphertext | bytes,
    now: int,
) -> bytes:
    """Decrypt only with an unexpired key."""
    if not isinstance(ct, HybridCiphertext):
        ct = HybridCiphertext.from_bytes(ct)
    sk = select_key(list(keys), ct.pattern)
    if is_expired(sk, now) is Validity.INVALID:
        raise KeyExpired(sk.expiry, now)
    return decrypt_payload(params, sk, ct)
