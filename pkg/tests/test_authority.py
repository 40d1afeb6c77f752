import base64
import json
import socket
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest
import uvicorn
from fastapi.testclient import TestClient

from conftest import SMALL
from slie import pairing as pg
from slie.authority import Authority, AuthorityConfig, create_app
from slie.authority.core import MSK_FILE, PARAMS_FILE, BadPassphrase, seal_msk, unseal_msk
from slie.client import AuthorityClient
from slie.envelope import encrypt_payload
from slie.errors import NotEligible, NotFound, NotInitialized, Unauthorized
from slie.lifecycle import DAY, Eligibility, KeyStatus, checked_decrypt
from slie.pattern import pattern_from_uri
from slie.wkdibe import load_secret_keys

TOKEN = "test-admin-token"
T0 = 1_760_000_000


class Clock:
    def __init__(self, t=T0):
        self.t = t

    def __call__(self):
        return self.t


@pytest.fixture
def clock():
    return Clock()


@pytest.fixture
def authority(tmp_path, clock):
    a = Authority.initialize(tmp_path / "state", "pw", clock=clock)
    yield a
    a.close()


@pytest.fixture
def api(authority):
    client = TestClient(create_app(authority, TOKEN))
    client.headers["Authorization"] = f"Bearer {TOKEN}"
    return client


def test_issue_nurse_key(authority, rng):
    issued = authority.issue("charlie", "nurse", "/HC/Data/EHR/patient_1/record")
    assert issued.expiry == T0 + 7 * DAY
    sk = load_secret_keys(issued.key_blob)[0]
    ct = encrypt_payload(authority.params, pattern_from_uri("/HC/Data/EHR/patient_1/record"), b"chart", rng)
    assert checked_decrypt(authority.params, [sk], ct, T0) == b"chart"
    rec = authority.get(issued.key_id)
    assert rec.status is KeyStatus.ACTIVE and rec.subject == "charlie"


def test_refresh_and_ineligible(authority, clock):
    issued = authority.issue("alice", "doctor", "/HC/Data")
    clock.t += 20 * DAY
    out = authority.refresh(issued.key_id, Eligibility(True, True))
    assert out.record.expiry > out.previous_expiry == issued.expiry
    before = authority.get(issued.key_id)
    with pytest.raises(NotEligible):
        authority.refresh(issued.key_id, Eligibility(False, True))
    assert authority.get(issued.key_id) == before


def test_sweep(authority, clock):
    a = authority.issue("f", "family", "/HC/Portal")
    b = authority.issue("d", "doctor", "/HC/Data")
    clock.t += 2 * DAY
    assert authority.sweep() == [a.key_id]
    assert authority.get(a.key_id).status is KeyStatus.EXPIRED
    assert authority.get(b.key_id).status is KeyStatus.ACTIVE
    events = authority.store.audit_events()
    assert [e.event for e in events] == ["issued", "issued", "swept"]
    assert events[-1].at == clock.t


def test_reopen(tmp_path, clock):
    a = Authority.initialize(tmp_path / "s", "pw", clock=clock)
    issued = a.issue("x", "nurse", "/HC")
    a.close()
    b = Authority.open(tmp_path / "s", "pw")
    assert b.params == a.params
    assert b.get(issued.key_id).expiry == issued.expiry
    b.close()
    with pytest.raises(BadPassphrase):
        Authority.open(tmp_path / "s", "wrong")
    with pytest.raises(NotInitialized):
        Authority.open(tmp_path / "empty", "pw")
    with pytest.raises(FileExistsError):
        Authority.initialize(tmp_path / "s", "pw")


def test_msk_file_is_private_and_sealed(authority, tmp_path):
    state = tmp_path / "state"
    assert (state / MSK_FILE).stat().st_mode & 0o777 == 0o600
    msk = unseal_msk((state / MSK_FILE).read_bytes(), "pw")
    assert pg.pair(authority.params.g, msk.element) == authority.params.z
    again = seal_msk(msk, "pw", n=2**10)
    assert unseal_msk(again, "pw").element == msk.element


def _needles(element):
    raw = pg.g2_to_bytes(element)
    return [raw, raw.hex().encode(), base64.urlsafe_b64encode(raw).rstrip(b"="), base64.b64encode(raw)]


def test_master_secret_never_leaves(authority, api, tmp_path, caplog):
    caplog.set_level("DEBUG")
    bodies = [api.get("/v1/params").content]
    for i in range(5):
        r = api.post("/v1/keys", json={"subject": f"s{i}", "role": "nurse", "uri": f"/HC/{i}"})
        bodies.append(r.content)
        bodies.append(api.get(f"/v1/keys/{r.json()['key_id']}").content)
    bodies.append(api.post("/v1/sweep").content)
    files = [p.read_bytes() for p in (tmp_path / "state").rglob("*") if p.is_file() and p.name != MSK_FILE]
    haystack = b"".join(bodies + files) + caplog.text.encode()
    for needle in _needles(authority._msk.element):
        assert needle not in haystack
    assert "redacted" in repr(authority._msk).lower()


def test_http_surface(api, clock):
    r = api.post("/v1/keys", json={"subject": "alice", "role": "nurse", "uri": "/HC/Data"})
    assert r.status_code == 201
    key_id = r.json()["key_id"]
    meta = api.get(f"/v1/keys/{key_id}").json()
    assert meta["status"] == "active" and meta["role"] == "nurse"
    assert "secret_key" not in meta
    clock.t += 6 * DAY
    r = api.post(f"/v1/keys/{key_id}/refresh", json={"active_employment": True, "patient_responsibility": True})
    body = r.json()
    assert r.status_code == 200 and body["expiry"] > body["previous_expiry"]
    r = api.post(f"/v1/keys/{key_id}/refresh", json={})
    assert r.status_code == 403 and r.json()["code"] == "NotEligible"
    assert api.get("/v1/keys/nope").json() == {"code": "NotFound", "message": "no key 'nope'"}
    r = api.post("/v1/keys", json={"subject": "a", "role": "wizard", "uri": "/x"})
    assert r.status_code == 400 and r.json()["code"] == "UnknownRole"
    r = api.post("/v1/keys", json={"subject": "a", "role": "nurse", "uri": "/x",
                                   "epoch_range": {"start": "2026-02-01", "end": "2026-01-01"}})
    assert r.status_code == 422 and r.json()["code"] == "ValidationError"


def test_time_locked_issue_over_http(api):
    r = api.post("/v1/keys", json={"subject": "a", "role": "doctor", "uri": "/HC",
                                   "epoch_range": {"start": "2026-01-30", "end": "2026-03-31"}})
    blob = base64.urlsafe_b64decode(r.json()["secret_key"] + "==")
    assert len(load_secret_keys(blob)) == 4  # two days and two months


def test_auth_required(authority):
    client = TestClient(create_app(authority, TOKEN))
    assert client.get("/v1/params").status_code == 200
    for headers in ({}, {"Authorization": "Bearer wrong"}, {"Authorization": "Basic x"}):
        r = client.post("/v1/keys", json={"subject": "a", "role": "nurse", "uri": "/x"}, headers=headers)
        assert r.status_code == 401 and r.json()["code"] == "Unauthorized"
    assert client.post("/v1/sweep").status_code == 401


def test_uninitialized_service():
    client = TestClient(create_app(None, TOKEN))
    r = client.get("/v1/params")
    assert r.status_code == 503 and r.json()["code"] == "NotInitialized"
    with pytest.raises(ValueError):
        create_app(None, "")


def test_client_maps_errors(api):
    c = AuthorityClient("http://testserver", "bad", transport=api._transport)
    with pytest.raises(Unauthorized):
        c.issue("a", "nurse", "/x")
    c = AuthorityClient("http://testserver", TOKEN, transport=api._transport)
    with pytest.raises(NotFound):
        c.metadata("missing")
    assert c.sweep() == []


def test_config_file_and_env(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"listen": "0.0.0.0:9000", "store": "/srv/slie", "uri_slots": 8}))
    cfg = AuthorityConfig.load(path, env={"SLIE_ADMIN_TOKEN": "t", "SLIE_TIME_SLOTS": "0"})
    assert (cfg.host, cfg.port, cfg.store, cfg.uri_slots, cfg.time_slots) == ("0.0.0.0", 9000, "/srv/slie", 8, 0)
    assert cfg.admin_token == "t"
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ValueError):
        AuthorityConfig.load(path, env={})


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def live(tmp_path_factory):
    state = tmp_path_factory.mktemp("live") / "state"
    authority = Authority.initialize(state, "pw", layout=SMALL)
    port = _free_port()
    server = uvicorn.Server(uvicorn.Config(create_app(authority, TOKEN), host="127.0.0.1", port=port,
                                           log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}", authority
    server.should_exit = True
    thread.join(timeout=10)
    authority.close()


def test_fifty_concurrent_issues(live):
    url, authority = live
    before = len(authority.store)

    def issue(i):
        with AuthorityClient(url, TOKEN) as c:
            return c.issue(f"s{i}", "nurse", f"/HC/p{i}")["key_id"]

    with ThreadPoolExecutor(max_workers=16) as pool:
        ids = list(pool.map(issue, range(50)))
    assert len(set(ids)) == 50
    assert len(authority.store) - before == 50
    assert len(authority.store.audit_events()) == authority.store.mutation_count


def test_params_fetched_from_another_process(live):
    url, authority = live
    script = f"""
import sys
from slie.client import AuthorityClient
from slie import pairing as pg
p = AuthorityClient({url!r}).params()
ok = (pg.pair(p.g1, p.g2) == p.z
      and pg.pair(p.g, p.g3) == pg.pair(p.g3_g1, p.g_hat)
      and all(pg.pair(p.g, b) == pg.pair(a, p.g_hat) for a, b in zip(p.h_g1, p.h_g2)))
print("verified" if ok else "mismatch", p.layout.total_slots)
"""
    out = subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, timeout=60,
                         cwd=Path(__file__).parent)
    assert out.returncode == 0, out.stderr
    assert out.stdout.split() == ["verified", "3"]
