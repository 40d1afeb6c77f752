from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional

from ..lifecycle import DEFAULT_POLICY, RolePolicy

ENV_PREFIX = "SLIE_"
_ENV = {
    "listen": "LISTEN",
    "store": "STORE",
    "policy": "POLICY",
    "admin_token": "ADMIN_TOKEN",
    "passphrase": "MSK_PASSPHRASE",
    "uri_slots": "URI_SLOTS",
    "time_slots": "TIME_SLOTS",
}


@dataclass(frozen=True)
class AuthorityConfig:
    listen: str = "127.0.0.1:8750"
    store: str = "./slie-authority"
    policy: Optional[str] = None
    admin_token: str = ""
    passphrase: str = ""
    uri_slots: int = 14
    time_slots: int = 3

    @property
    def host(self) -> str:
        return self.listen.rpartition(":")[0] or "127.0.0.1"

    @property
    def port(self) -> int:
        return int(self.listen.rpartition(":")[2])

    def role_policy(self) -> RolePolicy:
        return RolePolicy.load(self.policy) if self.policy else DEFAULT_POLICY

    @classmethod
    def load(cls, path: Optional[str | Path] = None, env: Mapping[str, str] = os.environ) -> AuthorityConfig:
        """File values first, then ``SLIE_*`` environment overrides."""
        cfg = cls()
        if path is not None:
            doc = json.loads(Path(path).read_text())
            known = {f.name for f in fields(cls)}
            unknown = set(doc) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            cfg = replace(cfg, **doc)
        overrides = {}
        for name, suffix in _ENV.items():
            value = env.get(ENV_PREFIX + suffix)
            if value is not None:
                overrides[name] = int(value) if name.endswith("_slots") else value
        return replace(cfg, **overrides)
