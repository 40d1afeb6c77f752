"""Wildcard key derivation IBE (BBG-style, constant-size ciphertexts).

Group assignment: ciphertext elements live in G1; key elements live in G2.
The per-slot parameters ``h_i`` and ``g3`` are published in both groups so
encryption never touches G2.

    setup       z = e(g^α, g2),  msk = g2^α
    key_derive  a0 = msk · (g3 ∏ h_i^{P_i})^r,  a1 = ĝ^r,  b_j = h_j^r  (j free)
    encapsulate c2 = g^s,  c3 = (g3 ∏ h_i^{P_i})^s,  shared = z^s
    decapsulate e(c2, a0 ∏ b_j^{C_j}) / e(c3, a1) = z^s
"""
from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from . import pairing as pg
from .encoding import (
    TYPE_KEM_CT,
    TYPE_KEY_BUNDLE,
    TYPE_MSK,
    TYPE_PARAMS,
    TYPE_SECRET_KEY,
    Reader,
    frame,
    peek_type,
)
from .errors import (
    ExpiryExceedsParent,
    ExpiryInPast,
    LayoutMismatch,
    MalformedEncoding,
    NotAnExtension,
    PatternMismatch,
)
from .pairing import G1Point, G2Point, GT, Rng, Scalar
from .pattern import Pattern, SlotLayout, extends, matches

__all__ = [
    "KemCiphertext",
    "MasterSecret",
    "PublicParams",
    "SecretKey",
    "decapsulate",
    "delegate",
    "encapsulate",
    "key_derive",
    "load_secret_keys",
    "pack_key_bundle",
    "setup",
    "verify_key",
]


def _now() -> int:
    return int(time.time())


@dataclass(frozen=True, eq=False)
class PublicParams:
    layout: SlotLayout
    g: G1Point
    g_hat: G2Point
    g1: G1Point
    g2: G2Point
    g3: G2Point
    g3_g1: G1Point
    h_g1: tuple[G1Point, ...]
    h_g2: tuple[G2Point, ...]
    z: GT

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PublicParams) and self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        parts = [
            struct.pack(">HH", self.layout.uri_slots, self.layout.time_slots),
            pg.g1_to_bytes(self.g),
            pg.g2_to_bytes(self.g_hat),
            pg.g1_to_bytes(self.g1),
            pg.g2_to_bytes(self.g2),
            pg.g2_to_bytes(self.g3),
            pg.g1_to_bytes(self.g3_g1),
            *(pg.g1_to_bytes(h) for h in self.h_g1),
            *(pg.g2_to_bytes(h) for h in self.h_g2),
            pg.gt_to_bytes(self.z),
        ]
        return frame(TYPE_PARAMS, b"".join(parts))

    @classmethod
    def from_bytes(cls, data: bytes) -> PublicParams:
        r = Reader(data, TYPE_PARAMS)
        try:
            layout = SlotLayout(r.u16(), r.u16())
        except Exception as exc:
            raise MalformedEncoding(f"bad layout: {exc}") from exc
        g = pg.g1_from_bytes(r.take(pg.G1_SIZE))
        g_hat = pg.g2_from_bytes(r.take(pg.G2_SIZE))
        g1 = pg.g1_from_bytes(r.take(pg.G1_SIZE))
        g2 = pg.g2_from_bytes(r.take(pg.G2_SIZE))
        g3 = pg.g2_from_bytes(r.take(pg.G2_SIZE))
        g3_g1 = pg.g1_from_bytes(r.take(pg.G1_SIZE))
        n = layout.total_slots
        h_g1 = tuple(pg.g1_from_bytes(r.take(pg.G1_SIZE)) for _ in range(n))
        h_g2 = tuple(pg.g2_from_bytes(r.take(pg.G2_SIZE)) for _ in range(n))
        z_bytes = r.take(pg.GT_SIZE)
        r.done()
        z = pg.pair(g1, g2)
        if pg.gt_to_bytes(z) != z_bytes:
            raise MalformedEncoding("params z does not equal e(g1, g2)")
        return cls(layout, g, g_hat, g1, g2, g3, g3_g1, h_g1, h_g2, z)


@dataclass(frozen=True, eq=False)
class MasterSecret:
    element: G2Point = field(repr=False)

    def __repr__(self) -> str:
        return "MasterSecret(<redacted>)"

    def to_bytes(self) -> bytes:
        return frame(TYPE_MSK, pg.g2_to_bytes(self.element))

    @classmethod
    def from_bytes(cls, data: bytes) -> MasterSecret:
        r = Reader(data, TYPE_MSK)
        element = pg.g2_from_bytes(r.take(pg.G2_SIZE))
        r.done()
        return cls(element)


@dataclass(frozen=True, eq=False)
class SecretKey:
    pattern: Pattern
    a0: G2Point = field(repr=False)
    a1: G2Point = field(repr=False)
    free: Mapping[int, G2Point] = field(repr=False)
    expiry: int
    issued_at: int

    def __post_init__(self):
        if tuple(sorted(self.free)) != self.pattern.free:
            raise MalformedEncoding("free elements must match the pattern's wildcard slots")
        if self.expiry <= self.issued_at:
            raise MalformedEncoding("expiry must be after issued_at")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SecretKey) and self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        parts = [self.pattern.to_bytes(), pg.g2_to_bytes(self.a0), pg.g2_to_bytes(self.a1)]
        parts += [pg.g2_to_bytes(self.free[j]) for j in self.pattern.free]
        parts.append(struct.pack(">QQ", self.expiry, self.issued_at))
        return frame(TYPE_SECRET_KEY, b"".join(parts))

    @classmethod
    def from_bytes(cls, data: bytes) -> SecretKey:
        r = Reader(data, TYPE_SECRET_KEY)
        pattern, r.pos = Pattern.read(data, r.pos)
        a0 = pg.g2_from_bytes(r.take(pg.G2_SIZE))
        a1 = pg.g2_from_bytes(r.take(pg.G2_SIZE))
        free = {j: pg.g2_from_bytes(r.take(pg.G2_SIZE)) for j in pattern.free}
        expiry, issued_at = r.u64(), r.u64()
        r.done()
        return cls(pattern, a0, a1, free, expiry, issued_at)


@dataclass(frozen=True, eq=False)
class KemCiphertext:
    pattern: Pattern
    c2: G1Point
    c3: G1Point

    def __eq__(self, other: object) -> bool:
        return isinstance(other, KemCiphertext) and self.to_bytes() == other.to_bytes()

    def to_bytes(self) -> bytes:
        body = self.pattern.to_bytes() + pg.g1_to_bytes(self.c2) + pg.g1_to_bytes(self.c3)
        return frame(TYPE_KEM_CT, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> KemCiphertext:
        r = Reader(data, TYPE_KEM_CT)
        pattern, r.pos = Pattern.read(data, r.pos)
        c2 = pg.g1_from_bytes(r.take(pg.G1_SIZE))
        c3 = pg.g1_from_bytes(r.take(pg.G1_SIZE))
        r.done()
        return cls(pattern, c2, c3)


def _check_layout(params: PublicParams, pattern: Pattern) -> None:
    if pattern.layout != params.layout:
        raise LayoutMismatch(f"pattern layout {pattern.layout} != params layout {params.layout}")


def setup(layout: SlotLayout, rng: Rng) -> tuple[PublicParams, MasterSecret]:
    alpha, beta, gamma = (Scalar(pg.random_scalar(rng)) for _ in range(3))
    deltas = [Scalar(pg.random_scalar(rng)) for _ in range(layout.total_slots)]
    g, g_hat = pg.g1_generator(), pg.g2_generator()
    g1 = g * alpha.native
    g2 = g_hat * beta.native
    params = PublicParams(
        layout=layout,
        g=g,
        g_hat=g_hat,
        g1=g1,
        g2=g2,
        g3=g_hat * gamma.native,
        g3_g1=g * gamma.native,
        h_g1=tuple(g * d.native for d in deltas),
        h_g2=tuple(g_hat * d.native for d in deltas),
        z=pg.pair(g1, g2),
    )
    return params, MasterSecret(g2 * alpha.native)


def _pattern_base_g2(params: PublicParams, pattern: Pattern, r: Scalar) -> G2Point:
    """(g3 · ∏_{fixed} h_i^{P_i})^r in G2."""
    points = [params.g3] + [params.h_g2[i] for i in pattern.fixed]
    scalars = [r] + [r * Scalar(pattern[i]) for i in pattern.fixed]
    return pg.multiexp_g2(points, scalars)


def key_derive(
    params: PublicParams,
    msk: MasterSecret,
    pattern: Pattern,
    expiry: int,
    rng: Rng,
    now: Optional[int] = None,
) -> SecretKey:
    _check_layout(params, pattern)
    now = _now() if now is None else now
    if expiry <= now:
        raise ExpiryInPast(f"expiry {expiry} is not after now {now}")
    r = Scalar(pg.random_scalar(rng))
    a0 = msk.element + _pattern_base_g2(params, pattern, r)
    a1 = params.g_hat * r.native
    free = {j: params.h_g2[j] * r.native for j in pattern.free}
    return SecretKey(pattern, a0, a1, free, expiry, now)


def delegate(
    params: PublicParams,
    sk: SecretKey,
    child_pattern: Pattern,
    expiry: int,
    rng: Rng,
    now: Optional[int] = None,
) -> SecretKey:
    """Derive a re-randomized key for a more specific pattern."""
    _check_layout(params, child_pattern)
    _check_layout(params, sk.pattern)
    if not extends(sk.pattern, child_pattern):
        raise NotAnExtension("child pattern does not extend the key's pattern")
    if expiry > sk.expiry:
        raise ExpiryExceedsParent(f"requested expiry {expiry} exceeds parent expiry {sk.expiry}")
    now = _now() if now is None else now
    if expiry <= now:
        raise ExpiryInPast(f"expiry {expiry} is not after now {now}")
    newly_fixed = [j for j in sk.pattern.free if child_pattern[j] is not None]
    r = Scalar(pg.random_scalar(rng))
    fold = pg.multiexp_g2(
        [sk.free[j] for j in newly_fixed], [Scalar(child_pattern[j]) for j in newly_fixed]
    )
    a0 = sk.a0 + fold + _pattern_base_g2(params, child_pattern, r)
    a1 = sk.a1 + params.g_hat * r.native
    free = {j: sk.free[j] + params.h_g2[j] * r.native for j in child_pattern.free}
    return SecretKey(child_pattern, a0, a1, free, expiry, now)


def encapsulate(params: PublicParams, pattern: Pattern, rng: Rng) -> tuple[GT, KemCiphertext]:
    _check_layout(params, pattern)
    s = Scalar(pg.random_scalar(rng))
    points = [params.g3_g1] + [params.h_g1[i] for i in pattern.fixed]
    scalars = [s] + [s * Scalar(pattern[i]) for i in pattern.fixed]
    c3 = pg.multiexp_g1(points, scalars)
    c2 = params.g * s.native
    shared = pg.pair(params.g1 * s.native, params.g2)
    return shared, KemCiphertext(pattern, c2, c3)


def decapsulate(params: PublicParams, sk: SecretKey, ct: KemCiphertext) -> GT:
    _check_layout(params, ct.pattern)
    _check_layout(params, sk.pattern)
    if not matches(sk.pattern, ct.pattern):
        raise PatternMismatch("key pattern does not match the ciphertext pattern")
    extra = [j for j in sk.pattern.free if ct.pattern[j] is not None]
    a0 = sk.a0
    if extra:
        a0 = a0 + pg.multiexp_g2([sk.free[j] for j in extra], [Scalar(ct.pattern[j]) for j in extra])
    return pg.pair_ratio((ct.c2, a0), (ct.c3, sk.a1))


def verify_key(params: PublicParams, sk: SecretKey, rng: Rng) -> bool:
    """Test-encapsulate to a random full extension of the key's pattern."""
    slots = [v if v is not None else pg.random_scalar(rng) for v in sk.pattern.slots]
    target = Pattern(sk.pattern.layout, tuple(slots))
    shared, ct = encapsulate(params, target, rng)
    return decapsulate(params, sk, ct) == shared


def pack_key_bundle(keys: Sequence[SecretKey]) -> bytes:
    parts = [struct.pack(">H", len(keys))]
    for k in keys:
        blob = k.to_bytes()
        parts.append(struct.pack(">I", len(blob)) + blob)
    return frame(TYPE_KEY_BUNDLE, b"".join(parts))


def load_secret_keys(data: bytes) -> list[SecretKey]:
    """Accept either a single secret key or a key bundle."""
    if peek_type(data) == TYPE_SECRET_KEY:
        return [SecretKey.from_bytes(data)]
    r = Reader(data, TYPE_KEY_BUNDLE)
    keys = [SecretKey.from_bytes(r.take(r.u32())) for _ in range(r.u16())]
    r.done()
    if not keys:
        raise MalformedEncoding("empty key bundle")
    return keys
