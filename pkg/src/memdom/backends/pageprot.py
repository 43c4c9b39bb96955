from __future__ import annotations

from ..keys import AccessMode, KeyRegister
from . import native
from .base import PAGE_SIZE, Backend

_PROT = {
    AccessMode.NONE: native.PROT_NONE,
    AccessMode.READ_ONLY: native.PROT_READ,
    AccessMode.READ_WRITE: native.PROT_READ | native.PROT_WRITE,
}


class PageProtBackend(Backend):
    """Enforcement through OS page permissions.

    Every mode change re-protects all pages carrying the key, so raw
    loads and stores are enforced too.  Page permissions are shared by
    all threads: this backend is process-wide, not per-thread, and is
    only meant for single-threaded use.
    """

    name = "pageprot"
    per_thread = False

    def __init__(self):
        native.libc()
        super().__init__()
        self.register = KeyRegister()
        self._copier = native.KernelCopier()
        self.protect_calls = 0

    def set_thread_access(self, key_id, mode):
        self._check_key(key_id)
        mode = AccessMode(mode)
        if self.register[key_id] == mode:
            return
        self.register.set(key_id, mode)
        self._apply(key_id, mode)

    def _apply(self, key_id, mode):
        for region in self._regions.values():
            if region.key_id == key_id:
                native.mprotect(region.base, region.pages * PAGE_SIZE, _PROT[mode])
                self.protect_calls += 1

    def thread_access(self, key_id):
        return self.register[key_id]

    def release_key(self, key_id):
        super().release_key(key_id)
        self.register.set(key_id, AccessMode.NONE)

    def _map(self, pages):
        return native.mmap_anon(pages * PAGE_SIZE)

    def _unmap(self, region):
        native.munmap(region.base, region.pages * PAGE_SIZE)

    def _tag(self, region):
        native.mprotect(region.base, region.pages * PAGE_SIZE,
                        _PROT[self.register[region.key_id]])

    def _read(self, region, address, size):
        return self._copier.read(address, size, region.key_id)

    def _write(self, region, address, data):
        self._copier.write(address, data, region.key_id)

    def _privileged(self, region, fn):
        mode = self.register[region.key_id] if region.key_id else AccessMode.NONE
        length = region.pages * PAGE_SIZE
        if mode != AccessMode.READ_WRITE:
            native.mprotect(region.base, length, _PROT[AccessMode.READ_WRITE])
        try:
            return fn()
        finally:
            if mode != AccessMode.READ_WRITE:
                native.mprotect(region.base, length, _PROT[mode])

    def privileged_read(self, address, size):
        region = self.region_at(address, size)
        return self._privileged(region, lambda: native.raw_read(address, size))

    def privileged_write(self, address, data):
        region = self.region_at(address, len(data))
        self._privileged(region, lambda: native.raw_write(address, data))

    def close(self):
        super().close()
        self._copier.close()
