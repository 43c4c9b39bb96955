"""Enforcement backends selectable by name: checked, pageprot, pkey, auto."""

from .base import PAGE_SIZE, Backend, Region
from .checked import CheckedBackend

BACKEND_NAMES = ("checked", "pageprot", "pkey", "auto")


def resolve_backend_name(name: str) -> str:
    if name not in BACKEND_NAMES:
        raise ValueError("unknown backend %r (expected one of %s)"
                         % (name, ", ".join(BACKEND_NAMES)))
    if name != "auto":
        return name
    from .pkey import pkey_supported
    return "pkey" if pkey_supported() else "checked"


def make_backend(name: str = "checked") -> Backend:
    name = resolve_backend_name(name)
    if name == "checked":
        return CheckedBackend()
    if name == "pageprot":
        from .pageprot import PageProtBackend
        return PageProtBackend()
    from .pkey import PkeyBackend
    return PkeyBackend()


def backend_available(name: str) -> bool:
    if name == "checked" or name == "auto":
        return True
    try:
        from . import native
        native.libc()
    except OSError:
        return False
    if name == "pkey":
        from .pkey import pkey_supported
        return pkey_supported()
    return True


__all__ = ["PAGE_SIZE", "Backend", "Region", "CheckedBackend", "BACKEND_NAMES",
           "make_backend", "resolve_backend_name", "backend_available"]
