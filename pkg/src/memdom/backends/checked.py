from __future__ import annotations

import threading

from ..errors import IsolationFault
from ..keys import AccessMode, KeyRegister
from .base import PAGE_SIZE, Backend

# Fake address space for software pools; never dereferenced.
_BASE_ADDRESS = 0x7E0000000000


class CheckedBackend(Backend):
    """Portable software enforcement.

    Pools are plain ``bytearray`` objects and every mediated access is
    checked against the calling thread's :class:`KeyRegister`.  Raw access
    that bypasses ``read``/``write`` is not intercepted.
    """

    name = "checked"
    per_thread = True

    def __init__(self):
        super().__init__()
        self._local = threading.local()
        self._memory = {}
        self._next_base = _BASE_ADDRESS

    @property
    def register(self) -> KeyRegister:
        reg = getattr(self._local, "register", None)
        if reg is None:
            reg = self._local.register = KeyRegister()
        return reg

    def set_thread_access(self, key_id, mode):
        self._check_key(key_id)
        self.register.set(key_id, mode)

    def thread_access(self, key_id):
        return self.register[key_id]

    def release_key(self, key_id):
        super().release_key(key_id)
        # Other threads' registers are unreachable; their stale modes are
        # harmless because no region carries the key any more.
        self.register.set(key_id, AccessMode.NONE)

    def _map(self, pages):
        base = self._next_base
        # Leave an unmapped guard page between pools.
        self._next_base += (pages + 1) * PAGE_SIZE
        self._memory[base] = bytearray(pages * PAGE_SIZE)
        return base

    def _unmap(self, region):
        del self._memory[region.base]

    def _tag(self, region):
        pass

    def _read(self, region, address, size):
        if not self.register[region.key_id].allows("read"):
            raise IsolationFault(region.key_id, "read", address)
        off = address - region.base
        return bytes(self._memory[region.base][off:off + size])

    def _write(self, region, address, data):
        if not self.register[region.key_id].allows("write"):
            raise IsolationFault(region.key_id, "write", address)
        off = address - region.base
        self._memory[region.base][off:off + len(data)] = data

    def privileged_read(self, address, size):
        region = self.region_at(address, size)
        off = address - region.base
        return bytes(self._memory[region.base][off:off + size])

    def privileged_write(self, address, data):
        region = self.region_at(address, len(data))
        off = address - region.base
        self._memory[region.base][off:off + len(data)] = data

    def raw_buffer(self, address):
        """The pool's backing store; writes here are NOT checked."""
        region = self.region_at(address)
        return self._memory[region.base], address - region.base
