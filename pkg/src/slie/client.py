"""HTTP client for the key authority."""
from __future__ import annotations

import datetime as dt
from typing import Optional

import httpx

from . import errors
from .authority.schemas import b64d
from .wkdibe import PublicParams


def _raise_for(resp: httpx.Response) -> None:
    if resp.is_success:
        return
    try:
        body = resp.json()
        code, message = body["code"], body["message"]
    except (ValueError, KeyError, TypeError):
        raise errors.SlieError(f"authority returned HTTP {resp.status_code}") from None
    cls = getattr(errors, code, None)
    if isinstance(cls, type) and issubclass(cls, errors.SlieError) and cls is not errors.KeyExpired:
        raise cls(message)
    raise errors.SlieError(f"{code}: {message}")


class AuthorityClient:
    def __init__(self, base_url: str, token: Optional[str] = None, timeout: float = 30.0,
                 transport: Optional[httpx.BaseTransport] = None):
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._http = httpx.Client(base_url=base_url.rstrip("/"), headers=headers,
                                  timeout=timeout, transport=transport)

    def __enter__(self) -> AuthorityClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        self._http.close()

    def params_bytes(self) -> bytes:
        resp = self._http.get("/v1/params")
        _raise_for(resp)
        return b64d(resp.json()["params"])

    def params(self) -> PublicParams:
        return PublicParams.from_bytes(self.params_bytes())

    def issue(self, subject: str, role: str, uri: str,
              epoch_range: Optional[tuple[dt.date, dt.date]] = None) -> dict:
        body: dict = {"subject": subject, "role": role, "uri": uri}
        if epoch_range:
            body["epoch_range"] = {"start": epoch_range[0].isoformat(), "end": epoch_range[1].isoformat()}
        resp = self._http.post("/v1/keys", json=body)
        _raise_for(resp)
        out = resp.json()
        out["secret_key"] = b64d(out["secret_key"])
        return out

    def refresh(self, key_id: str, active_employment: bool, patient_responsibility: bool) -> dict:
        resp = self._http.post(f"/v1/keys/{key_id}/refresh", json={
            "active_employment": active_employment,
            "patient_responsibility": patient_responsibility,
        })
        _raise_for(resp)
        out = resp.json()
        out["secret_key"] = b64d(out["secret_key"])
        return out

    def metadata(self, key_id: str) -> dict:
        resp = self._http.get(f"/v1/keys/{key_id}")
        _raise_for(resp)
        return resp.json()

    def sweep(self) -> list[str]:
        resp = self._http.post("/v1/sweep")
        _raise_for(resp)
        return resp.json()["expired"]
