from __future__ import annotations

import ctypes
import os
import threading

from ..errors import KeyExhaustion
from ..keys import NUM_KEYS, AccessMode
from . import native
from .base import PAGE_SIZE, Backend

_RIGHTS = {
    AccessMode.NONE: native.PKEY_DISABLE_ACCESS,
    AccessMode.READ_ONLY: native.PKEY_DISABLE_WRITE,
    AccessMode.READ_WRITE: 0,
}


def pkey_supported() -> bool:
    """True when the host kernel and CPU hand out protection keys."""
    try:
        lib = native.libc()
    except OSError:
        return False
    if not hasattr(lib, "pkey_alloc"):
        return False
    key = lib.pkey_alloc(0, native.PKEY_DISABLE_ACCESS)
    if key < 0:
        return False
    lib.pkey_free(key)
    return True


class PkeyBackend(Backend):
    """Enforcement through hardware protection keys (per-thread rights).

    The kernel copies the access register into new threads, so a thread
    spawned inside a sandbox would inherit its grants.  Each thread's first
    call into the backend therefore drops every key to access-disabled.
    """

    name = "pkey"
    per_thread = True

    def __init__(self):
        lib = native.libc()
        if not hasattr(lib, "pkey_alloc"):
            raise OSError("libc has no pkey_alloc")
        super().__init__()
        self._lib = lib
        self._copier = native.KernelCopier()
        self._joined = threading.local()

    def _join_thread(self):
        if not getattr(self._joined, "done", False):
            self._joined.done = True
            for key in self._keys:
                self._lib.pkey_set(key, native.PKEY_DISABLE_ACCESS)

    def _alloc_key(self):
        if len(self._keys) >= NUM_KEYS - 1:
            raise KeyExhaustion("all protection keys are in use")
        key = self._lib.pkey_alloc(0, native.PKEY_DISABLE_ACCESS)
        if key < 0:
            raise KeyExhaustion("pkey_alloc: %s" % os.strerror(ctypes.get_errno()))
        return key

    def release_key(self, key_id):
        super().release_key(key_id)
        self._lib.pkey_free(key_id)

    def set_thread_access(self, key_id, mode):
        self._check_key(key_id)
        self._join_thread()
        if self._lib.pkey_set(key_id, _RIGHTS[AccessMode(mode)]) != 0:
            raise OSError(ctypes.get_errno(), "pkey_set failed")

    def thread_access(self, key_id):
        self._join_thread()
        rights = self._lib.pkey_get(key_id)
        if rights < 0:
            raise OSError(ctypes.get_errno(), "pkey_get failed")
        if rights & native.PKEY_DISABLE_ACCESS:
            return AccessMode.NONE
        if rights & native.PKEY_DISABLE_WRITE:
            return AccessMode.READ_ONLY
        return AccessMode.READ_WRITE

    def _map(self, pages):
        return native.mmap_anon(pages * PAGE_SIZE)

    def _unmap(self, region):
        native.munmap(region.base, region.pages * PAGE_SIZE)

    def _tag(self, region):
        rc = self._lib.pkey_mprotect(region.base, region.pages * PAGE_SIZE,
                                     native.PROT_READ | native.PROT_WRITE, region.key_id)
        if rc != 0:
            raise OSError(ctypes.get_errno(), "pkey_mprotect failed")

    def _read(self, region, address, size):
        self._join_thread()
        return self._copier.read(address, size, region.key_id)

    def _write(self, region, address, data):
        self._join_thread()
        self._copier.write(address, data, region.key_id)

    def _privileged(self, region, fn):
        key = region.key_id
        if not key:
            return fn()
        saved = self._lib.pkey_get(key)
        self._lib.pkey_set(key, 0)
        try:
            return fn()
        finally:
            self._lib.pkey_set(key, saved)

    def privileged_read(self, address, size):
        region = self.region_at(address, size)
        return self._privileged(region, lambda: native.raw_read(address, size))

    def privileged_write(self, address, data):
        region = self.region_at(address, len(data))
        self._privileged(region, lambda: native.raw_write(address, data))

    def close(self):
        super().close()
        self._copier.close()
