"""Memory domains: key provisioning, page pools and in-pool allocation."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

from .backends import PAGE_SIZE, Backend, make_backend
from .errors import (
    ActiveSandbox,
    BadKey,
    BadSize,
    DoubleFree,
    IsolationFault,
    KeyExhaustion,
    NoSuchDomain,
    NotInitialized,
    PoolExhausted,
    UnknownHandle,
)
from .keys import NUM_KEYS, AccessMode
from .policy import Acl

ALIGNMENT = 16
POISON_BYTE = 0xDD

# Bookkeeping is accounted as the equivalent packed C layout, so figures do
# not depend on interpreter object overheads.
DOMAIN_DESCRIPTOR_BYTES = 40
ALLOC_RECORD_BYTES = 16


def round_up(size, align=ALIGNMENT):
    return (size + align - 1) // align * align


class FirstFitAllocator:
    """First-fit allocator over a sorted, coalescing free list.

    All bookkeeping lives here, outside the pool, so the whole pool is
    usable: ``capacity`` bytes can be handed out exactly.
    """

    def __init__(self, capacity: int, align: int = ALIGNMENT):
        self.capacity = capacity
        self.align = align
        self.free_list = [[0, capacity]] if capacity else []
        self.live = {}          # offset -> reserved (rounded) size
        self.live_bytes = 0
        self.peak_bytes = 0
        self.peak_records = len(self.free_list)

    def alloc(self, size: int) -> int:
        need = round_up(size, self.align)
        for i, (off, length) in enumerate(self.free_list):
            if length >= need:
                if length == need:
                    del self.free_list[i]
                else:
                    self.free_list[i] = [off + need, length - need]
                self.live[off] = need
                self.live_bytes += need
                self.peak_bytes = max(self.peak_bytes, self.live_bytes)
                self._note_records()
                return off
        raise PoolExhausted("no free run of %d bytes (capacity %d, live %d)"
                            % (need, self.capacity, self.live_bytes))

    def free(self, offset: int) -> int:
        length = self.live.pop(offset)
        self.live_bytes -= length
        fl = self.free_list
        lo, hi = 0, len(fl)
        while lo < hi:
            mid = (lo + hi) // 2
            if fl[mid][0] < offset:
                lo = mid + 1
            else:
                hi = mid
        fl.insert(lo, [offset, length])
        if lo + 1 < len(fl) and fl[lo][0] + fl[lo][1] == fl[lo + 1][0]:
            fl[lo][1] += fl[lo + 1][1]
            del fl[lo + 1]
        if lo > 0 and fl[lo - 1][0] + fl[lo - 1][1] == fl[lo][0]:
            fl[lo - 1][1] += fl[lo][1]
            del fl[lo]
        self._note_records()
        return length

    def _note_records(self):
        self.peak_records = max(self.peak_records, len(self.free_list) + len(self.live))

    @property
    def bookkeeping_bytes(self):
        return self.peak_records * ALLOC_RECORD_BYTES


@dataclass(frozen=True)
class DataObjectHandle:
    domain_label: str
    offset: int
    size: int
    address: int
    serial: int


@dataclass
class MemoryDomain:
    domain_label: str
    key_id: int
    pool_base: int
    pool_pages: int
    allocator: FirstFitAllocator
    handles: Dict[int, DataObjectHandle] = field(default_factory=dict)
    freed: set = field(default_factory=set)

    @property
    def capacity(self):
        return self.pool_pages * PAGE_SIZE

    @property
    def high_water(self):
        return self.allocator.peak_bytes

    @property
    def live_bytes(self):
        return self.allocator.live_bytes

    def bookkeeping_bytes(self):
        desc = DOMAIN_DESCRIPTOR_BYTES + len(self.domain_label) + 1
        return desc + self.allocator.bookkeeping_bytes


class DomainManager:
    """Owns the protection keys and page pools of one ACL.

    Construction provisions one key and one pool per ACL domain and leaves
    every key at mode NONE on all threads.  Until the first sandbox grant
    (see :meth:`close_startup`) allocations are allowed without holding a
    ReadWrite grant, so long-lived structures can be set up at startup.
    """

    def __init__(self, acl: Acl, backend: Union[str, Backend] = "checked"):
        if len(acl.domains) > NUM_KEYS - 1:
            raise KeyExhaustion("%d domains requested, only %d keys usable"
                                % (len(acl.domains), NUM_KEYS - 1))
        if isinstance(backend, Backend):
            self.backend = backend
            self._owns_backend = False
        else:
            self.backend = make_backend(backend)
            self._owns_backend = True
        self.acl = acl
        self.domains: Dict[str, MemoryDomain] = {}
        self.startup = True
        self.active = True
        self._lock = threading.Lock()
        self._frames_lock = threading.Lock()
        self._open_frames = 0
        self._serials = itertools.count(1)
        try:
            for decl in acl.domains:
                key = self.backend.provision_key()
                base = self.backend.map_pool(decl.pool_pages)
                self.backend.tag_region(base, decl.pool_pages, key)
                self.domains[decl.domain_label] = MemoryDomain(
                    decl.domain_label, key, base, decl.pool_pages,
                    FirstFitAllocator(decl.pool_pages * PAGE_SIZE))
                self.backend.set_thread_access(key, AccessMode.NONE)
        except Exception:
            self._release()
            raise

    # -- lifecycle ---------------------------------------------------------

    def _release(self):
        for dom in self.domains.values():
            self.backend.unmap_pool(dom.pool_base)
            self.backend.release_key(dom.key_id)
        self.domains = {}
        if self._owns_backend:
            self.backend.close()

    def teardown(self) -> None:
        if not self.active:
            raise NotInitialized("domain manager already torn down")
        if self._open_frames:
            raise ActiveSandbox("%d sandbox frame(s) still open" % self._open_frames)
        self._release()
        self.active = False

    def close_startup(self) -> None:
        self.startup = False

    def frame_opened(self):
        with self._frames_lock:
            self._open_frames += 1

    def frame_closed(self):
        with self._frames_lock:
            self._open_frames -= 1

    def _require_active(self):
        if not self.active:
            raise NotInitialized("domain manager is not initialized")

    # -- keys --------------------------------------------------------------

    def domain(self, label: str) -> MemoryDomain:
        self._require_active()
        try:
            return self.domains[label]
        except KeyError:
            raise NoSuchDomain("no domain %r" % (label,)) from None

    def key_ids(self):
        return [d.key_id for d in self.domains.values()]

    def set_access(self, key_id: int, mode: AccessMode) -> None:
        self._require_active()
        if key_id not in self.key_ids():
            raise BadKey("key %r is not a provisioned domain key" % (key_id,))
        self.backend.set_thread_access(key_id, AccessMode(mode))

    def access(self, key_id: int) -> AccessMode:
        if key_id == 0:
            return AccessMode.READ_WRITE
        if key_id not in self.key_ids():
            raise BadKey("key %r is not a provisioned domain key" % (key_id,))
        return self.backend.thread_access(key_id)

    def domain_access(self, label: str) -> AccessMode:
        return self.access(self.domain(label).key_id)

    def deny_all(self) -> None:
        for key in self.key_ids():
            self.backend.set_thread_access(key, AccessMode.NONE)

    # -- allocation --------------------------------------------------------

    def _check_alloc_rights(self, dom, op):
        if self.startup:
            return
        if self.backend.thread_access(dom.key_id) != AccessMode.READ_WRITE:
            raise IsolationFault(dom.key_id, op, dom.pool_base,
                                 "domain %s needs a ReadWrite grant" % dom.domain_label)

    def domain_alloc(self, domain_label: str, size: int) -> DataObjectHandle:
        dom = self.domain(domain_label)
        if not isinstance(size, int) or size <= 0:
            raise BadSize("allocation size must be a positive integer, got %r" % (size,))
        self._check_alloc_rights(dom, "alloc")
        with self._lock:
            if size > dom.capacity:
                raise PoolExhausted("%d bytes exceed pool capacity %d" % (size, dom.capacity))
            offset = dom.allocator.alloc(size)
            handle = DataObjectHandle(domain_label, offset, size,
                                      dom.pool_base + offset, next(self._serials))
            dom.handles[handle.serial] = handle
            self.backend.privileged_write(handle.address, bytes(round_up(size)))
        return handle

    def domain_free(self, domain_label: str, handle: DataObjectHandle) -> None:
        dom = self.domain(domain_label)
        if not isinstance(handle, DataObjectHandle) or handle.domain_label != domain_label:
            raise UnknownHandle("handle does not belong to domain %r" % domain_label)
        self._check_alloc_rights(dom, "free")
        with self._lock:
            if handle.serial in dom.freed:
                raise DoubleFree("handle %d in %s already freed" % (handle.serial, domain_label))
            if dom.handles.get(handle.serial) != handle:
                raise UnknownHandle("handle %d unknown to domain %r"
                                    % (handle.serial, domain_label))
            del dom.handles[handle.serial]
            dom.freed.add(handle.serial)
            length = dom.allocator.free(handle.offset)
            self.backend.privileged_write(handle.address, bytes([POISON_BYTE]) * length)

    # -- mediated access ---------------------------------------------------

    def _span(self, handle, offset, size):
        if offset < 0 or size < 0 or offset + size > handle.size:
            raise IndexError("access [%d, %d) outside object of %d bytes"
                             % (offset, offset + size, handle.size))
        return handle.address + offset

    def read(self, handle: DataObjectHandle, offset: int = 0, size: Optional[int] = None) -> bytes:
        if size is None:
            size = handle.size - offset
        return self.backend.read(self._span(handle, offset, size), size)

    def write(self, handle: DataObjectHandle, offset: int, data) -> None:
        self.backend.write(self._span(handle, offset, len(data)), data)

    def privileged_read(self, handle: DataObjectHandle) -> bytes:
        """Monitor-internal snapshot of an object, ignoring access modes."""
        return self.backend.privileged_read(handle.address, handle.size)

    # -- introspection -----------------------------------------------------

    def bookkeeping(self):
        return {label: dom.bookkeeping_bytes() for label, dom in self.domains.items()}
