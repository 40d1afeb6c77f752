"""Binary container framing: ``"SLIE" | version | type | body``."""
from __future__ import annotations

import struct

from .errors import MalformedEncoding

MAGIC = b"SLIE"
VERSION = 0x01

TYPE_PARAMS = 0x01
TYPE_MSK = 0x02
TYPE_SECRET_KEY = 0x03
TYPE_KEM_CT = 0x04
TYPE_HYBRID_CT = 0x05
TYPE_KEY_BUNDLE = 0x06
TYPE_SEALED_MSK = 0x07

TYPE_NAMES = {
    TYPE_PARAMS: "params",
    TYPE_MSK: "master-secret",
    TYPE_SECRET_KEY: "secret-key",
    TYPE_KEM_CT: "kem-ciphertext",
    TYPE_HYBRID_CT: "hybrid-ciphertext",
    TYPE_KEY_BUNDLE: "key-bundle",
    TYPE_SEALED_MSK: "sealed-master-secret",
}


def frame(type_byte: int, body: bytes) -> bytes:
    return MAGIC + bytes([VERSION, type_byte]) + body


def peek_type(data: bytes) -> int:
    if len(data) < 6 or data[:4] != MAGIC:
        raise MalformedEncoding("missing SLIE magic")
    if data[4] != VERSION:
        raise MalformedEncoding(f"unsupported format version {data[4]}")
    return data[5]


class Reader:
    """Cursor over a framed blob; every short read raises MalformedEncoding."""

    def __init__(self, data: bytes, type_byte: int | None = None):
        self.data = memoryview(data)
        self.pos = 0
        if type_byte is not None:
            found = peek_type(data)
            if found != type_byte:
                raise MalformedEncoding(
                    f"expected {TYPE_NAMES.get(type_byte, type_byte)}, "
                    f"found {TYPE_NAMES.get(found, found)}"
                )
            self.pos = 6

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise MalformedEncoding("truncated input")
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def rest(self) -> bytes:
        return self.take(len(self.data) - self.pos)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise MalformedEncoding(f"{len(self.data) - self.pos} trailing bytes")
