"""Wire models for the key-authority HTTP API.

Binary fields travel as unpadded base64url strings.
"""
from __future__ import annotations

import base64
import datetime as dt
from typing import Optional

from pydantic import BaseModel, Field, model_validator


def b64e(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode()


def b64d(text: str) -> bytes:
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


class ErrorEnvelope(BaseModel):
    code: str
    message: str


class EpochRange(BaseModel):
    start: dt.date
    end: dt.date

    @model_validator(mode="after")
    def _ordered(self):
        if self.start > self.end:
            raise ValueError("start must not be after end")
        return self


class IssueRequest(BaseModel):
    subject: str = Field(min_length=1)
    role: str = Field(min_length=1)
    uri: str
    epoch_range: Optional[EpochRange] = None


class IssueResponse(BaseModel):
    key_id: str
    secret_key: str
    expiry: int


class RefreshRequest(BaseModel):
    active_employment: bool = False
    patient_responsibility: bool = False


class RefreshResponse(BaseModel):
    key_id: str
    secret_key: str
    expiry: int
    previous_expiry: int
    renewal_count: int


class ParamsResponse(BaseModel):
    params: str


class KeyMetadata(BaseModel):
    key_id: str
    subject: str
    role: str
    uri: str
    pattern: str
    sk_digest: str
    issued_at: int
    expiry: int
    renewal_count: int
    status: str
    time_locked: bool
    lineage: Optional[str] = None


class SweepResponse(BaseModel):
    expired: list[str]
