"""Process-wide flat API: one manager and monitor per process.

Mirrors the C-style call surface (init/teardown, domain malloc/free,
grant/revoke, size checks, copy in/out) for code that prefers a global
instance over passing a :class:`Monitor` around.
"""

from __future__ import annotations

import threading

from .domains import DomainManager
from .errors import AlreadyInitialized, NotInitialized
from .monitor import Monitor

_lock = threading.Lock()
_monitor = None


def init(acl, backend="checked") -> Monitor:
    global _monitor
    with _lock:
        if _monitor is not None:
            raise AlreadyInitialized("memdom is already initialized in this process")
        _monitor = Monitor(DomainManager(acl, backend))
        return _monitor


def teardown() -> None:
    global _monitor
    with _lock:
        if _monitor is None:
            raise NotInitialized("memdom is not initialized")
        _monitor.manager.teardown()
        _monitor = None


def current() -> Monitor:
    if _monitor is None:
        raise NotInitialized("memdom is not initialized")
    return _monitor


def malloc(domain_label, size):
    return current().manager.domain_alloc(domain_label, size)


def free(domain_label, handle):
    current().manager.domain_free(domain_label, handle)


def grant_data_access(func_name):
    return current().grant_data_access(func_name)


def revoke_data_access(frame):
    current().revoke_data_access(frame)


def check_input_size(object_label, size):
    return current().check_input_size(object_label, size)


def check_output_size(object_label, size):
    return current().check_output_size(object_label, size)


def copy_from_untrusted(object_label, source):
    current().copy_from_untrusted(object_label, source)


def copy_to_untrusted(object_label, dest):
    return current().copy_to_untrusted(object_label, dest)
