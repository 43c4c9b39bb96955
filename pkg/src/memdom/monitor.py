"""Per-function execution sandboxes over the domains of a DomainManager."""

from __future__ import annotations

import contextlib
import functools
import threading
import time
from dataclasses import dataclass
from typing import Dict, Tuple

from .domains import DataObjectHandle, DomainManager
from .errors import (
    FrameOrderViolation,
    NestedLimit,
    NoActiveGrant,
    NotAllocated,
    SizeExceeded,
    UnknownFunction,
    UnknownObject,
    WrongThread,
)
from .keys import AccessMode

MAX_DEPTH = 16

# Packed-layout sizes used for bookkeeping accounting.
GRANT_HEADER_BYTES = 16
GRANT_ENTRY_BYTES = 4
SIZED_ENTRY_BYTES = 16
OBJECT_ENTRY_BYTES = 24
FRAME_BYTES = 32


@dataclass(frozen=True)
class Grant:
    ro_keys: frozenset
    rw_keys: frozenset
    sized_objects: Tuple[Tuple[str, int], ...]

    def mode_for(self, key_id):
        if key_id in self.rw_keys:
            return AccessMode.READ_WRITE
        if key_id in self.ro_keys:
            return AccessMode.READ_ONLY
        return AccessMode.NONE


def build_grant_table(acl, manager: DomainManager) -> Dict[str, Grant]:
    """Resolve every rule's domains to keys.  ReadWrite wins over ReadOnly."""
    table = {}
    for rule in acl.rules:
        rw = frozenset(manager.domain(s.domain_label).key_id for s in rule.outputs)
        ro = frozenset(manager.domain(s.domain_label).key_id for s in rule.inputs) - rw
        sized = []
        for spec in rule.inputs + rule.outputs:
            if spec.declared_size is not None and (spec.object_label, spec.declared_size) not in sized:
                sized.append((spec.object_label, spec.declared_size))
        table[rule.func_name] = Grant(ro, rw, tuple(sized))
    return table


@dataclass(frozen=True, eq=False)
class SandboxFrame:
    func_name: str
    elevated_keys: Tuple[Tuple[int, AccessMode], ...]
    thread_id: int
    depth: int


class Monitor:
    """Grants and revokes domain access around privileged functions.

    Grants are looked up by function name.  Revoking a frame always drops
    every domain key back to NONE, whatever the enclosing frame had, so
    code after a nested sandbox returns runs without any grant.

    With ``enforce=False`` frames are still tracked but key modes are left
    alone; :meth:`open_all` then gives the calling thread full access.
    """

    def __init__(self, manager: DomainManager, acl=None, enforce: bool = True):
        self.manager = manager
        self.acl = acl if acl is not None else manager.acl
        self.enforce = enforce
        self.grants = build_grant_table(self.acl, manager)
        self._objects = {o.object_label: o for o in self.acl.objects}
        self._handles: Dict[str, DataObjectHandle] = {}
        self._local = threading.local()
        self._peak_depth = 0
        self.profiling = False
        self.monitor_ns = 0

    # -- frames ------------------------------------------------------------

    def _stack(self):
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        return stack

    def depth(self) -> int:
        return len(self._stack())

    def current_frame(self):
        stack = self._stack()
        return stack[-1] if stack else None

    def grant_data_access(self, func_name: str) -> SandboxFrame:
        t0 = time.perf_counter_ns() if self.profiling else 0
        grant = self.grants.get(func_name)
        if grant is None:
            raise UnknownFunction("no access rule for function %r" % (func_name,))
        stack = self._stack()
        if len(stack) >= MAX_DEPTH:
            raise NestedLimit("sandbox nesting deeper than %d" % MAX_DEPTH)
        self.manager.close_startup()
        elevated = []
        for key in self.manager.key_ids():
            mode = grant.mode_for(key)
            if self.enforce:
                self.manager.backend.set_thread_access(key, mode)
            if mode != AccessMode.NONE:
                elevated.append((key, mode))
        frame = SandboxFrame(func_name, tuple(elevated), threading.get_ident(), len(stack))
        stack.append(frame)
        self.manager.frame_opened()
        if len(stack) > self._peak_depth:
            self._peak_depth = len(stack)
        if self.profiling:
            self.monitor_ns += time.perf_counter_ns() - t0
        return frame

    def revoke_data_access(self, frame: SandboxFrame) -> None:
        t0 = time.perf_counter_ns() if self.profiling else 0
        if frame.thread_id != threading.get_ident():
            raise WrongThread("frame for %r was opened on another thread" % frame.func_name)
        stack = self._stack()
        if not stack or stack[-1] is not frame:
            raise FrameOrderViolation("frame for %r is not the innermost sandbox"
                                      % frame.func_name)
        stack.pop()
        if self.enforce:
            self.manager.deny_all()
        self.manager.frame_closed()
        if self.profiling:
            self.monitor_ns += time.perf_counter_ns() - t0

    @contextlib.contextmanager
    def sandbox(self, func_name: str):
        frame = self.grant_data_access(func_name)
        try:
            yield frame
        finally:
            self.revoke_data_access(frame)

    def sandboxed_call(self, func_name: str, body, *args, **kwargs):
        frame = self.grant_data_access(func_name)
        try:
            return body(*args, **kwargs)
        finally:
            self.revoke_data_access(frame)

    def sandboxed(self, func_name: str):
        """Decorator form of :meth:`sandboxed_call`."""
        def wrap(body):
            @functools.wraps(body)
            def wrapper(*args, **kwargs):
                return self.sandboxed_call(func_name, body, *args, **kwargs)
            wrapper.raw_body = body
            return wrapper
        return wrap

    def open_all(self) -> None:
        """Give the calling thread ReadWrite on every domain (monitor disabled)."""
        for key in self.manager.key_ids():
            self.manager.backend.set_thread_access(key, AccessMode.READ_WRITE)

    # -- data objects ------------------------------------------------------

    def _object(self, label):
        try:
            return self._objects[label]
        except KeyError:
            raise UnknownObject("object %r is not in the ACL" % (label,)) from None

    def alloc_object(self, label: str, size=None) -> DataObjectHandle:
        obj = self._object(label)
        if size is None:
            size = obj.declared_size
            if size is None:
                raise SizeExceeded("object %r has no declared size; pass one" % label)
        elif obj.declared_size is not None and size > obj.declared_size:
            raise SizeExceeded("%d bytes exceed declared size %d of %r"
                               % (size, obj.declared_size, label))
        handle = self.manager.domain_alloc(obj.domain_label, size)
        self._handles[label] = handle
        return handle

    def free_object(self, label: str) -> None:
        obj = self._object(label)
        handle = self.object_handle(label)
        self.manager.domain_free(obj.domain_label, handle)
        del self._handles[label]

    def object_handle(self, label: str) -> DataObjectHandle:
        self._object(label)
        try:
            return self._handles[label]
        except KeyError:
            raise NotAllocated("object %r is not allocated" % (label,)) from None

    def _check_size(self, label, size):
        t0 = time.perf_counter_ns() if self.profiling else 0
        declared = self._object(label).declared_size
        try:
            if declared is not None and size > declared:
                raise SizeExceeded("%d bytes exceed declared size %d of %r"
                                   % (size, declared, label))
            return True
        finally:
            if self.profiling:
                self.monitor_ns += time.perf_counter_ns() - t0

    def check_input_size(self, object_label: str, size: int) -> bool:
        return self._check_size(object_label, size)

    def check_output_size(self, object_label: str, size: int) -> bool:
        return self._check_size(object_label, size)

    def _require_grant(self, label, need):
        obj = self._object(label)
        frame = self.current_frame()
        key = self.manager.domain(obj.domain_label).key_id
        held = dict(frame.elevated_keys).get(key, AccessMode.NONE) if frame else AccessMode.NONE
        if held < need:
            raise NoActiveGrant("no active sandbox grants %s on %r"
                                % (need.name, obj.domain_label))

    def copy_from_untrusted(self, object_label: str, source) -> None:
        self._require_grant(object_label, AccessMode.READ_WRITE)
        self.check_input_size(object_label, len(source))
        handle = self.object_handle(object_label)
        if len(source) > handle.size:
            raise SizeExceeded("%d bytes exceed allocated size %d of %r"
                               % (len(source), handle.size, object_label))
        self.manager.write(handle, 0, bytes(source))

    def copy_to_untrusted(self, object_label: str, dest) -> int:
        self._require_grant(object_label, AccessMode.READ_ONLY)
        handle = self.object_handle(object_label)
        if len(dest) < handle.size:
            raise SizeExceeded("destination of %d bytes is smaller than %r (%d bytes)"
                               % (len(dest), object_label, handle.size))
        self.check_output_size(object_label, handle.size)
        dest[:handle.size] = self.manager.read(handle)
        return handle.size

    # -- accounting --------------------------------------------------------

    def memory_overhead(self):
        """Peak bytes of monitor bookkeeping, per domain and in total.

        Per-domain figures cover the domain descriptor, allocator records,
        object-table entries and grant-table entries naming the domain.
        Rule headers and sandbox frames are shared and only counted in the
        total.
        """
        per_domain = dict(self.manager.bookkeeping())
        by_key = {d.key_id: label for label, d in self.manager.domains.items()}
        shared = 0
        for name, grant in self.grants.items():
            shared += GRANT_HEADER_BYTES + len(name) + 1
            for key in grant.ro_keys | grant.rw_keys:
                per_domain[by_key[key]] += GRANT_ENTRY_BYTES
            for label, _ in grant.sized_objects:
                per_domain[self._objects[label].domain_label] += SIZED_ENTRY_BYTES
        for obj in self.acl.objects:
            per_domain[obj.domain_label] += OBJECT_ENTRY_BYTES + len(obj.object_label) + 1
        shared += self._peak_depth * FRAME_BYTES
        return {"domains": per_domain, "shared": shared,
                "total": sum(per_domain.values()) + shared}
