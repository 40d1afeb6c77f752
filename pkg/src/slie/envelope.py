"""KEM/DEM envelope: WKD-IBE encapsulation + ChaCha20-Poly1305.

File layout (all integers big-endian)::

    "SLIE" | 0x01 | 0x05 | u32 header_len | header | nonce[12] | u64 sealed_len | sealed

``header`` is the serialized KEM ciphertext (which carries the pattern).
Everything up to and including the header is bound as associated data.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import pairing as pg
from .encoding import TYPE_HYBRID_CT, Reader, frame
from .errors import (
    AuthenticationFailure,
    EmptyContext,
    LayoutMismatch,
    MalformedCiphertext,
    MalformedEncoding,
    PatternMismatch,
    PayloadTooLarge,
    RngFailure,
)
from .pairing import GT, Rng
from .pattern import Pattern, matches
from .wkdibe import KemCiphertext, PublicParams, SecretKey, decapsulate, encapsulate

DEM_CONTEXT = b"slie:dem:v1"
NONCE_SIZE = 12
TAG_SIZE = 16
MAX_PAYLOAD = 1 << 30


def kdf_shared_secret(shared: GT, context: bytes) -> bytes:
    """HKDF-SHA256 over the canonical GT encoding, ``context`` as info."""
    if not context:
        raise EmptyContext("KDF context must be non-empty")
    hkdf = HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=context)
    return hkdf.derive(pg.gt_to_bytes(shared))


@dataclass(frozen=True)
class HybridCiphertext:
    kem: KemCiphertext
    nonce: bytes
    sealed: bytes
    header: bytes = b""

    def __post_init__(self):
        # keep the exact bytes that were parsed; they are the AEAD associated data
        if not self.header:
            object.__setattr__(self, "header", self.kem.to_bytes())

    @property
    def pattern(self) -> Pattern:
        return self.kem.pattern

    def to_bytes(self) -> bytes:
        return _assemble(self.header, self.nonce, self.sealed)

    @classmethod
    def from_bytes(cls, data: bytes) -> HybridCiphertext:
        try:
            r = Reader(data, TYPE_HYBRID_CT)
            header = r.take(r.u32())
            nonce = r.take(NONCE_SIZE)
            sealed_len = r.u64()
            if sealed_len < TAG_SIZE:
                raise MalformedEncoding("sealed region shorter than the tag")
            sealed = r.take(sealed_len)
            r.done()
            kem = KemCiphertext.from_bytes(header)
        except MalformedEncoding as exc:
            raise MalformedCiphertext(str(exc)) from exc
        except Exception as exc:  # invalid points surface as InvalidPoint
            raise MalformedCiphertext(f"cannot parse ciphertext: {exc}") from exc
        return cls(kem, nonce, sealed, header)


def _aad(header: bytes) -> bytes:
    return frame(TYPE_HYBRID_CT, struct.pack(">I", len(header)) + header)


def _assemble(header: bytes, nonce: bytes, sealed: bytes) -> bytes:
    return b"".join([_aad(header), nonce, struct.pack(">Q", len(sealed)), sealed])


def seal_kem(params: PublicParams, pattern: Pattern, rng: Rng) -> tuple[bytes, KemCiphertext]:
    """KEM half of encryption: returns the one-time DEM key and KEM ciphertext."""
    shared, kem = encapsulate(params, pattern, rng)
    return kdf_shared_secret(shared, DEM_CONTEXT), kem


def seal_dem(key: bytes, kem: KemCiphertext, plaintext: bytes, rng: Rng) -> HybridCiphertext:
    """DEM half of encryption: AEAD-seal ``plaintext`` under ``key``."""
    try:
        nonce = rng.randbytes(NONCE_SIZE)
    except Exception as exc:
        raise RngFailure(f"randomness source failed: {exc}") from exc
    header = kem.to_bytes()
    sealed = ChaCha20Poly1305(key).encrypt(nonce, plaintext, _aad(header))
    return HybridCiphertext(kem, nonce, sealed, header)


def encrypt_payload(
    params: PublicParams, pattern: Pattern, plaintext: bytes, rng: Rng
) -> HybridCiphertext:
    if len(plaintext) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(plaintext)} bytes exceeds 1 GiB")
    key, kem = seal_kem(params, pattern, rng)
    return seal_dem(key, kem, plaintext, rng)


def decrypt_payload(params: PublicParams, sk: SecretKey, ct: HybridCiphertext | bytes) -> bytes:
    """Recover the plaintext. Expiry is not checked here; see ``lifecycle``."""
    if not isinstance(ct, HybridCiphertext):
        ct = HybridCiphertext.from_bytes(ct)
    if ct.pattern.layout != sk.pattern.layout or ct.pattern.layout != params.layout:
        raise LayoutMismatch("ciphertext, key and params layouts differ")
    if not matches(sk.pattern, ct.pattern):
        raise PatternMismatch("key pattern does not match the ciphertext pattern")
    key = kdf_shared_secret(decapsulate(params, sk, ct.kem), DEM_CONTEXT)
    try:
        return ChaCha20Poly1305(key).decrypt(ct.nonce, ct.sealed, _aad(ct.header))
    except InvalidTag as exc:
        raise AuthenticationFailure("AEAD tag verification failed") from exc


def select_key(keys: list[SecretKey], pattern: Pattern) -> SecretKey:
    """First key in a bundle whose pattern matches ``pattern``."""
    for k in keys:
        if k.pattern.layout == pattern.layout and matches(k.pattern, pattern):
            return k
    raise PatternMismatch("no key in the bundle matches the ciphertext pattern")
