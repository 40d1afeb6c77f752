from .config import AuthorityConfig
from .core import Authority, Issued
from .service import create_app
from .store import JournalStore

__all__ = ["Authority", "AuthorityConfig", "Issued", "JournalStore", "create_app"]
