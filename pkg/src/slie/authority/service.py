from __future__ import annotations

import hmac
import logging
from typing import Optional

from fastapi import Depends, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.security import HTTPAuthorizationCredentials, HTTPBearer
from starlette.exceptions import HTTPException as StarletteHTTPException

from ..errors import NotInitialized, SlieError, Unauthorized
from ..lifecycle import Eligibility
from .core import Authority
from .schemas import (
    ErrorEnvelope,
    IssueRequest,
    IssueResponse,
    KeyMetadata,
    ParamsResponse,
    RefreshRequest,
    RefreshResponse,
    SweepResponse,
    b64e,
)

log = logging.getLogger(__name__)

_bearer = HTTPBearer(auto_error=False)
_errors = {401: {"model": ErrorEnvelope}, 404: {"model": ErrorEnvelope}}


def _envelope(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_app(authority: Optional[Authority], admin_token: str) -> FastAPI:
    if not admin_token:
        raise ValueError("an admin token is required")
    app = FastAPI(title="SLIE key authority", version="1")
    app.state.authority = authority

    @app.exception_handler(SlieError)
    async def _slie_error(request: Request, exc: SlieError):
        return _envelope(exc.http_status, exc.code, exc.message)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ()))
        return _envelope(422, "ValidationError", f"{where}: {first.get('msg', 'invalid request')}")

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException):
        return _envelope(exc.status_code, "HTTPError", str(exc.detail))

    def current() -> Authority:
        if app.state.authority is None:
            raise NotInitialized("authority has not been set up")
        return app.state.authority

    def admin(creds: Optional[HTTPAuthorizationCredentials] = Depends(_bearer)) -> None:
        if creds is None or not hmac.compare_digest(creds.credentials.encode(), admin_token.encode()):
            raise Unauthorized("missing or invalid bearer token")

    @app.get("/v1/params", response_model=ParamsResponse)
    def get_params():
        return ParamsResponse(params=b64e(current().params_bytes()))

    @app.post("/v1/keys", response_model=IssueResponse, status_code=201, responses=_errors,
              dependencies=[Depends(admin)])
    def issue_key(req: IssueRequest):
        window = (req.epoch_range.start, req.epoch_range.end) if req.epoch_range else None
        issued = current().issue(req.subject, req.role, req.uri, window)
        return IssueResponse(key_id=issued.key_id, secret_key=b64e(issued.key_blob), expiry=issued.expiry)

    @app.post("/v1/keys/{key_id}/refresh", response_model=RefreshResponse, responses=_errors,
              dependencies=[Depends(admin)])
    def refresh_key(key_id: str, req: RefreshRequest):
        evidence = Eligibility(req.active_employment, req.patient_responsibility)
        done = current().refresh(key_id, evidence)
        return RefreshResponse(
            key_id=done.record.key_id,
            secret_key=b64e(done.key_blob),
            expiry=done.record.expiry,
            previous_expiry=done.previous_expiry,
            renewal_count=done.record.renewal_count,
        )

    @app.get("/v1/keys/{key_id}", response_model=KeyMetadata, responses=_errors,
             dependencies=[Depends(admin)])
    def key_metadata(key_id: str):
        rec = current().get(key_id)
        return KeyMetadata(
            key_id=rec.key_id,
            subject=rec.subject,
            role=rec.role,
            uri=rec.uri,
            pattern=rec.pattern.to_bytes().hex(),
            sk_digest=rec.sk_digest,
            issued_at=rec.issued_at,
            expiry=rec.expiry,
            renewal_count=rec.renewal_count,
            status=rec.status.value,
            time_locked=rec.time_locked,
            lineage=rec.lineage,
        )

    @app.post("/v1/sweep", response_model=SweepResponse, dependencies=[Depends(admin)])
    def sweep():
        return SweepResponse(expired=current().sweep())

    return app
