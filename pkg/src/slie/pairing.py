"""BLS12-381 pairing backend.

Thin layer over ``py_arkworks_bls12381``: group elements are the library's
native ``G1Point``/``G2Point``/``GT`` objects (additive notation for G1/G2,
multiplicative ``*`` for GT). This module adds the canonical byte encodings,
hashing into the scalar field and caller-supplied randomness.

Encodings: G1 48-byte compressed, G2 96-byte compressed (ZCash flag layout),
GT 576 bytes as twelve 48-byte big-endian Fp coefficients in tower order
(c0.c0.c0, c0.c0.c1, c0.c1.c0, ..., c1.c2.c1), Scalar 32-byte big-endian.
"""
from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

from py_arkworks_bls12381 import GT, G1Point, G2Point
from py_arkworks_bls12381 import Scalar as _ArkScalar

from .errors import EmptyDomainTag, InvalidPoint, MalformedEncoding, RngFailure

__all__ = [
    "FIELD_MODULUS",
    "GROUP_ORDER",
    "G1Point",
    "G2Point",
    "GT",
    "Rng",
    "Scalar",
    "g1_from_bytes",
    "g1_generator",
    "g1_to_bytes",
    "g2_from_bytes",
    "g2_generator",
    "g2_to_bytes",
    "gt_pow",
    "gt_to_bytes",
    "hash_to_scalar",
    "pair",
    "pair_ratio",
    "random_scalar",
    "wipe",
]

GROUP_ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001
FIELD_MODULUS = int(
    "1a0111ea397fe69a4b1ba7b6434bacd764774b84f38512bf6730d2a0f6b0f624"
    "1eabfffeb153ffffb9feffffffffaaab",
    16,
)

G1_SIZE = 48
G2_SIZE = 96
GT_SIZE = 576
SCALAR_SIZE = 32
_FP_SIZE = 48


class Rng(Protocol):
    """Anything with ``random.Random``'s ``randrange``/``randbytes``.

    Production code passes ``secrets.SystemRandom()``; tests pass a seeded
    ``random.Random``.
    """

    def randrange(self, start: int, stop: int) -> int: ...

    def randbytes(self, n: int) -> bytes: ...


class Scalar:
    """Element of Z_p, p the prime group order.

    Arithmetic runs in the backend's fixed-width Montgomery representation,
    never on Python's variable-time big integers.
    """

    __slots__ = ("_v",)

    def __init__(self, value: int | _ArkScalar = 0):
        self._v = value if isinstance(value, _ArkScalar) else _ArkScalar(value % GROUP_ORDER)

    @property
    def native(self) -> _ArkScalar:
        return self._v

    def __int__(self) -> int:
        return int(self._v)

    def __add__(self, other: Scalar) -> Scalar:
        return Scalar(self._v + other._v)

    def __sub__(self, other: Scalar) -> Scalar:
        return Scalar(self._v - other._v)

    def __mul__(self, other: Scalar) -> Scalar:
        return Scalar(self._v * other._v)

    def __neg__(self) -> Scalar:
        return Scalar(-self._v)

    def inverse(self) -> Scalar:
        if self._v.is_zero():
            raise ZeroDivisionError("zero has no inverse in Z_p")
        return Scalar(self._v.inverse())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Scalar) and self._v == other._v

    def __hash__(self) -> int:
        return hash(int(self._v))

    def __repr__(self) -> str:
        return f"Scalar({int(self._v):#x})"

    def to_bytes(self) -> bytes:
        return bytes(reversed(self._v.to_le_bytes()))

    @classmethod
    def from_bytes(cls, data: bytes) -> Scalar:
        if len(data) != SCALAR_SIZE:
            raise MalformedEncoding(f"scalar must be {SCALAR_SIZE} bytes, got {len(data)}")
        try:
            return cls(_ArkScalar.from_le_bytes(list(reversed(data))))
        except Exception as exc:
            raise MalformedEncoding("non-canonical scalar encoding") from exc


def random_scalar(rng: Rng) -> int:
    """Uniform draw from [1, p-1]."""
    try:
        return rng.randrange(1, GROUP_ORDER)
    except Exception as exc:
        raise RngFailure(f"randomness source failed: {exc}") from exc


def hash_to_scalar(data: bytes, domain_tag: bytes) -> int:
    """Deterministically map ``data`` into [1, p-1] under ``domain_tag``.

    SHA-512 over ``u16(len(tag)) || tag || data || counter`` reduced mod p;
    a zero result is re-hashed with the next counter value.
    """
    if not domain_tag:
        raise EmptyDomainTag("domain tag must be non-empty")
    prefix = len(domain_tag).to_bytes(2, "big") + domain_tag + data
    for counter in range(256):
        digest = hashlib.sha512(prefix + bytes([counter])).digest()
        value = int.from_bytes(digest, "big") % GROUP_ORDER
        if value:
            return value
    raise AssertionError("unreachable: 256 consecutive zero reductions")


def g1_generator() -> G1Point:
    return G1Point()


def g2_generator() -> G2Point:
    return G2Point()


def pair(a: G1Point, b: G2Point) -> GT:
    if not isinstance(a, G1Point) or not isinstance(b, G2Point):
        raise InvalidPoint("pair expects (G1Point, G2Point)")
    return GT.pairing(a, b)


def pair_ratio(num: tuple[G1Point, G2Point], den: tuple[G1Point, G2Point]) -> GT:
    """e(num) / e(den) as one multi-pairing (single final exponentiation)."""
    return GT.multi_pairing([num[0], -den[0]], [num[1], den[1]])


def gt_pow(x: GT, exponent: int) -> GT:
    exponent %= GROUP_ORDER
    result = GT.one()
    for bit in bin(exponent)[2:]:
        result = result * result
        if bit == "1":
            result = result * x
    return result


def multiexp_g1(points: Sequence[G1Point], scalars: Sequence[Scalar]) -> G1Point:
    if not points:
        return G1Point.identity()
    return G1Point.multiexp_unchecked(list(points), [s.native for s in scalars])


def multiexp_g2(points: Sequence[G2Point], scalars: Sequence[Scalar]) -> G2Point:
    if not points:
        return G2Point.identity()
    return G2Point.multiexp_unchecked(list(points), [s.native for s in scalars])


def g1_to_bytes(p: G1Point) -> bytes:
    return bytes(p.to_compressed_bytes())


def g2_to_bytes(p: G2Point) -> bytes:
    return bytes(p.to_compressed_bytes())


def g1_from_bytes(data: bytes) -> G1Point:
    if len(data) != G1_SIZE:
        raise InvalidPoint(f"G1 encoding must be {G1_SIZE} bytes, got {len(data)}")
    try:
        point = G1Point.from_compressed_bytes(bytes(data))
    except Exception as exc:
        raise InvalidPoint("bytes do not encode a G1 subgroup point") from exc
    # the backend tolerates junk after an infinity flag; accept one encoding only
    if bytes(point.to_compressed_bytes()) != bytes(data):
        raise InvalidPoint("non-canonical G1 encoding")
    return point


def g2_from_bytes(data: bytes) -> G2Point:
    if len(data) != G2_SIZE:
        raise InvalidPoint(f"G2 encoding must be {G2_SIZE} bytes, got {len(data)}")
    try:
        point = G2Point.from_compressed_bytes(bytes(data))
    except Exception as exc:
        raise InvalidPoint("bytes do not encode a G2 subgroup point") from exc
    # the backend tolerates junk after an infinity flag; accept one encoding only
    if bytes(point.to_compressed_bytes()) != bytes(data):
        raise InvalidPoint("non-canonical G2 encoding")
    return point


def gt_to_bytes(x: GT) -> bytes:
    # The backend renders GT as the little-endian serialization of its
    # twelve tower coefficients; re-emit each coefficient big-endian.
    raw = bytes.fromhex(str(x))
    if len(raw) != GT_SIZE:
        raise AssertionError(f"unexpected GT rendering of {len(raw)} bytes")
    return b"".join(raw[i : i + _FP_SIZE][::-1] for i in range(0, GT_SIZE, _FP_SIZE))


def wipe(buf: bytearray) -> None:
    """Overwrite a secret buffer in place."""
    for i in range(len(buf)):
        buf[i] = 0
