from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass

from ..errors import BadKey, IsolationFault, KeyExhaustion
from ..keys import NUM_KEYS, AccessMode

PAGE_SIZE = 4096


@dataclass
class Region:
    base: int
    pages: int
    key_id: int = 0

    @property
    def end(self):
        return self.base + self.pages * PAGE_SIZE


class Backend:
    """Enforcement interface shared by every backend.

    Subclasses provide memory mapping, key provisioning and the actual
    enforcement.  ``read``/``write`` are the handle-mediated accessors:
    they raise :class:`IsolationFault` when the calling thread's access
    mode for the region's key forbids the operation.  ``privileged_read``
    and ``privileged_write`` are for monitor-internal use only (zeroing,
    poisoning, audits) and bypass the access modes.
    """

    name = "abstract"
    per_thread = True

    def __init__(self):
        self._regions = {}
        self._bases = []
        self._keys = set()
        self.trace = None
        self._trace_lock = threading.Lock()

    # -- keys --------------------------------------------------------------

    def provision_key(self) -> int:
        key = self._alloc_key()
        self._keys.add(key)
        return key

    def _alloc_key(self) -> int:
        for key in range(1, NUM_KEYS):
            if key not in self._keys:
                return key
        raise KeyExhaustion("all %d protection keys are in use" % (NUM_KEYS - 1))

    def release_key(self, key_id: int) -> None:
        self._check_key(key_id)
        self._keys.discard(key_id)

    def provisioned_keys(self):
        return sorted(self._keys)

    def _check_key(self, key_id):
        if key_id not in self._keys:
            raise BadKey("key %r is not provisioned" % (key_id,))

    def set_thread_access(self, key_id: int, mode: AccessMode) -> None:
        raise NotImplementedError

    def thread_access(self, key_id: int) -> AccessMode:
        raise NotImplementedError

    # -- memory ------------------------------------------------------------

    def map_pool(self, pages: int) -> int:
        base = self._map(pages)
        region = Region(base, pages)
        self._regions[base] = region
        bisect.insort(self._bases, base)
        return base

    def unmap_pool(self, base: int) -> None:
        region = self._regions.pop(base)
        self._bases.remove(base)
        self._unmap(region)

    def tag_region(self, base: int, pages: int, key_id: int) -> None:
        self._check_key(key_id)
        region = self._regions[base]
        if pages != region.pages:
            raise ValueError("tagging must cover the whole pool")
        region.key_id = key_id
        self._tag(region)

    def live_pages(self) -> int:
        """Audit hook: pool pages currently mapped by this backend."""
        return sum(r.pages for r in self._regions.values())

    def region_at(self, address: int, size: int = 1) -> Region:
        i = bisect.bisect_right(self._bases, address) - 1
        if i >= 0:
            region = self._regions[self._bases[i]]
            if address + size <= region.end:
                return region
        raise IsolationFault(0, "map", address, "address outside any pool")

    def _map(self, pages):
        raise NotImplementedError

    def _unmap(self, region):
        raise NotImplementedError

    def _tag(self, region):
        raise NotImplementedError

    # -- mediated access ---------------------------------------------------

    def read(self, address: int, size: int) -> bytes:
        region = self.region_at(address, size)
        try:
            data = self._read(region, address, size)
        except IsolationFault:
            self._record(region.key_id, "read", False)
            raise
        self._record(region.key_id, "read", True)
        return data

    def write(self, address: int, data) -> None:
        region = self.region_at(address, len(data))
        try:
            self._write(region, address, data)
        except IsolationFault:
            self._record(region.key_id, "write", False)
            raise
        self._record(region.key_id, "write", True)

    def _record(self, key_id, op, allowed):
        if self.trace is not None:
            with self._trace_lock:
                self.trace.append((threading.get_ident(), key_id, op, allowed))

    def _read(self, region, address, size):
        raise NotImplementedError

    def _write(self, region, address, data):
        raise NotImplementedError

    def privileged_read(self, address: int, size: int) -> bytes:
        raise NotImplementedError

    def privileged_write(self, address: int, data) -> None:
        raise NotImplementedError

    def close(self) -> None:
        for base in list(self._bases):
            self.unmap_pool(base)
        for key in list(self._keys):
            self.release_key(key)
