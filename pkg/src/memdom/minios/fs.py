"""A small in-memory library OS whose management tables live in memory domains.

File descriptor state (fd table, anonymous mapping table) is kept in
``handle_dom``; filesystem management state (mount table and the
name index of every file and directory) is kept in ``fs_dom``.  File
contents are ordinary untagged Python memory.  Every syscall runs inside a
sandbox for its policy rule, so the tables are only reachable from inside
the syscall that needs them.
"""

from __future__ import annotations

import ctypes
import struct
import zlib
from collections import namedtuple
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Optional

from ..backends import PAGE_SIZE
from ..domains import DomainManager
from ..errors import (
    BadFd,
    Busy,
    Exists,
    InvalidArgument,
    IsDir,
    NameTooLong,
    NoEnt,
    NoSpace,
    NotDir,
    TooManyFds,
)
from ..monitor import Monitor
from ..policy import load_acl, parse_policy

O_RDONLY = 0
O_WRONLY = 1
O_RDWR = 2
O_ACCMODE = 3
O_CREAT = 0o100
O_EXCL = 0o200
O_TRUNC = 0o1000
O_APPEND = 0o2000

_FLAG_APPEND = 0x4

FD_SLOTS = 64
FD_SLOT = struct.Struct("<BBHIQ")            # in_use, flags, pad, vnode, offset
VMA_SLOTS = 64
VMA_SLOT = struct.Struct("<B3xIQ")           # in_use, length, address
MOUNT_SLOTS = 16
MOUNT_SLOT = struct.Struct("<II56s")         # root vnode, covered vnode, path
INDEX_SLOTS = 192
INDEX_SLOT = struct.Struct("<IIBB2x52s")     # vnode, parent, kind, state, name
MAX_NAME = 52
MAX_PATH = 56
MAX_LIVE_NAMES = 160

_EMPTY, _LIVE, _TOMB = 0, 1, 2
KIND_FILE, KIND_DIR = 1, 2
_KIND_NAMES = {KIND_FILE: "file", KIND_DIR: "dir"}

ROOT_INO = 1
MMAP_BASE = 0x100000000

# syscall method -> policy function name
SYSCALLS = {
    "open": "open", "close": "close", "stat": "stat", "fstat": "fstat",
    "mmap_anon": "mmap", "munmap": "munmap", "read": "read", "write": "write",
    "mkdir": "mkdir", "unlink": "unlink", "mount": "mount",
}

TABLE_OBJECTS = ("fd_table", "vma_table", "mount_table", "vnode_index")

StatBuf = namedtuple("StatBuf", "st_ino st_kind st_size st_nlink")


def demo_policy_text() -> str:
    return resources.files(__package__).joinpath("demo.policy").read_text("utf-8")


def demo_acl_bytes() -> bytes:
    return resources.files(__package__).joinpath("demo.acl").read_bytes()


def demo_acl():
    """The compiled demo ACL shipped next to the policy source."""
    return load_acl(demo_acl_bytes())


def _scrubbed(length):
    # Enclave pages are recycled without OS zeroing, so the libOS clears
    # anonymous memory itself before handing it out.
    buf = bytearray(length)
    ctypes.memset((ctypes.c_char * length).from_buffer(buf), 0, length)
    return buf


@dataclass
class Vnode:
    ino: int
    kind: int
    content: bytearray = field(default_factory=bytearray)
    slot: Optional[int] = None
    nlink: int = 1


class MiniOS:
    """The library OS instance.

    ``mode="protected"`` runs syscalls inside enforced sandboxes;
    ``mode="vanilla"`` disables the monitor and leaves every domain
    ReadWrite on the creating thread, like a libOS without isolation.
    ``test_hooks`` exposes internal table locations for attack tests.
    """

    def __init__(self, backend="checked", mode="protected", acl=None, test_hooks=False):
        if mode not in ("protected", "vanilla"):
            raise ValueError("mode must be 'protected' or 'vanilla'")
        self.mode = mode
        self.acl = acl if acl is not None else demo_acl()
        self.manager = DomainManager(self.acl, backend)
        self.monitor = Monitor(self.manager, self.acl, enforce=(mode == "protected"))
        self._test_hooks = test_hooks
        self._tables = {name: self.monitor.alloc_object(name) for name in TABLE_OBJECTS}
        if mode == "vanilla":
            self.monitor.open_all()
        self.vnodes: Dict[int, Vnode] = {ROOT_INO: Vnode(ROOT_INO, KIND_DIR)}
        self._next_ino = ROOT_INO + 1
        self._regions: Dict[int, bytearray] = {}
        self._next_map = MMAP_BASE
        self._close_hooks = []
        self.monitor.sandboxed_call("mount", self._mount_root)

    def shutdown(self):
        self.manager.teardown()

    # -- table access (always through the mediated accessors) -------------

    def _get(self, table, offset, size):
        return self.manager.read(self._tables[table], offset, size)

    def _put(self, table, offset, data):
        self.manager.write(self._tables[table], offset, data)

    def _fd_slot(self, fd):
        if not isinstance(fd, int) or not 0 <= fd < FD_SLOTS:
            raise BadFd("bad file descriptor %r" % (fd,))
        in_use, flags, _, ino, offset = FD_SLOT.unpack(
            self._get("fd_table", fd * FD_SLOT.size, FD_SLOT.size))
        if not in_use:
            raise BadFd("file descriptor %d is not open" % fd)
        return flags, ino, offset

    def _set_fd_slot(self, fd, flags, ino, offset):
        self._put("fd_table", fd * FD_SLOT.size, FD_SLOT.pack(1, flags, 0, ino, offset))

    def _open_fds(self):
        raw = self._get("fd_table", 0, FD_SLOTS * FD_SLOT.size)
        return [FD_SLOT.unpack_from(raw, i * FD_SLOT.size) for i in range(FD_SLOTS)]

    def _mounts(self):
        """Used mount slots as (slot, root vnode, covered vnode)."""
        raw = self._get("mount_table", 0, MOUNT_SLOTS * MOUNT_SLOT.size)
        return [(i, root, covered)
                for i, (root, covered, _) in enumerate(MOUNT_SLOT.iter_unpack(raw)) if root]

    def _index_entry(self, slot):
        ino, parent, kind, state, name = INDEX_SLOT.unpack(
            self._get("vnode_index", slot * INDEX_SLOT.size, INDEX_SLOT.size))
        return ino, parent, kind, state, name.rstrip(b"\0")

    def _index_home(self, parent, name):
        return zlib.crc32(struct.pack("<I", parent) + name) % INDEX_SLOTS

    def _lookup(self, parent, name):
        home = self._index_home(parent, name)
        for i in range(INDEX_SLOTS):
            slot = (home + i) % INDEX_SLOTS
            ino, p, kind, state, n = self._index_entry(slot)
            if state == _EMPTY:
                return None
            if state == _LIVE and p == parent and n == name:
                return slot, ino, kind
        return None

    def _insert(self, parent, name, vnode):
        live = sum(1 for v in self.vnodes.values() if v.slot is not None)
        if live >= MAX_LIVE_NAMES:
            raise NoSpace("name index is full")
        home = self._index_home(parent, name)
        for i in range(INDEX_SLOTS):
            slot = (home + i) % INDEX_SLOTS
            if self._index_entry(slot)[3] != _LIVE:
                self._put("vnode_index", slot * INDEX_SLOT.size,
                          INDEX_SLOT.pack(vnode.ino, parent, vnode.kind, _LIVE, name))
                vnode.slot = slot
                return
        raise NoSpace("name index is full")

    def _fs_kind(self, vnode):
        """Kind of ``vnode`` as recorded in filesystem metadata."""
        if vnode.slot is not None:
            ino, _, kind, state, _ = self._index_entry(vnode.slot)
            if state == _LIVE and ino == vnode.ino:
                return kind
        else:
            for _, root, _ in self._mounts():
                if root == vnode.ino:
                    return KIND_DIR
        return vnode.kind

    # -- path resolution ---------------------------------------------------

    @staticmethod
    def _components(path):
        if not isinstance(path, str) or not path.startswith("/"):
            raise InvalidArgument("path must be absolute: %r" % (path,))
        if len(path.encode()) > 4096:
            raise NameTooLong("path too long")
        parts = []
        for comp in path.split("/"):
            if comp in ("", "."):
                continue
            if comp == "..":
                if parts:
                    parts.pop()
                continue
            name = comp.encode()
            if len(name) > MAX_NAME:
                raise NameTooLong("component %r longer than %d bytes" % (comp, MAX_NAME))
            parts.append(name)
        return parts

    def _covered(self):
        """Map of covered directory vnode -> root vnode of the fs mounted on it."""
        return {c: root for _, root, c in self._mounts() if c}

    @staticmethod
    def _cross(covered, ino):
        # Mounts may stack, so follow the chain to the topmost root.
        while ino in covered:
            ino = covered[ino]
        return ino

    def _walk(self, parts, covered):
        cur = ROOT_INO
        for name in parts:
            if self.vnodes[cur].kind != KIND_DIR:
                raise NotDir("not a directory")
            hit = self._lookup(cur, name)
            if hit is None:
                raise NoEnt("no such file or directory: %s" % name.decode())
            cur = self._cross(covered, hit[1])
        return cur

    def _resolve(self, path):
        return self._walk(self._components(path), self._covered())

    def _resolve_parent(self, path):
        parts = self._components(path)
        covered = self._covered()
        if not parts:
            return None, None, covered
        parent = self._walk(parts[:-1], covered)
        if self.vnodes[parent].kind != KIND_DIR:
            raise NotDir("not a directory")
        return parent, parts[-1], covered

    def _new_vnode(self, kind):
        vnode = Vnode(self._next_ino, kind)
        self._next_ino += 1
        self.vnodes[vnode.ino] = vnode
        return vnode

    def _stat(self, vnode):
        return StatBuf(vnode.ino, _KIND_NAMES[self._fs_kind(vnode)],
                       len(vnode.content), vnode.nlink)

    def _maybe_reclaim(self, ino, fds=None):
        vnode = self.vnodes.get(ino)
        if vnode is None or vnode.nlink:
            return
        fds = fds if fds is not None else self._open_fds()
        if not any(in_use and v == ino for in_use, _, _, v, _ in fds):
            del self.vnodes[ino]

    # -- syscall bodies (run inside their sandbox) ------------------------

    def _mount_root(self):
        self._put("mount_table", 0, MOUNT_SLOT.pack(ROOT_INO, 0, b"/"))

    def _open_body(self, path, flags):
        accmode = flags & O_ACCMODE
        if accmode == O_ACCMODE:
            raise InvalidArgument("bad access mode")
        parent, name, covered = self._resolve_parent(path)
        if parent is None:
            ino = ROOT_INO
            if flags & O_CREAT and flags & O_EXCL:
                raise Exists("/ exists")
        else:
            hit = self._lookup(parent, name)
            if hit is None:
                if not flags & O_CREAT:
                    raise NoEnt("no such file or directory: %s" % path)
                ino = None
            else:
                if flags & O_CREAT and flags & O_EXCL:
                    raise Exists("file exists: %s" % path)
                ino = self._cross(covered, hit[1])
        if ino is not None and self.vnodes[ino].kind == KIND_DIR and accmode != O_RDONLY:
            raise IsDir("is a directory: %s" % path)
        fds = self._open_fds()
        free = next((i for i, slot in enumerate(fds) if not slot[0]), None)
        if free is None:
            raise TooManyFds("too many open files")
        if ino is None:
            vnode = self._new_vnode(KIND_FILE)
            try:
                self._insert(parent, name, vnode)
            except NoSpace:
                del self.vnodes[vnode.ino]
                self._next_ino -= 1
                raise
            ino = vnode.ino
        elif flags & O_TRUNC and accmode != O_RDONLY:
            del self.vnodes[ino].content[:]
        stored = accmode | (_FLAG_APPEND if flags & O_APPEND else 0)
        self._set_fd_slot(free, stored, ino, 0)
        return free

    def _close_body(self, fd):
        _, ino, _ = self._fd_slot(fd)
        self._put("fd_table", fd * FD_SLOT.size, bytes(FD_SLOT.size))
        self._maybe_reclaim(ino)
        for hook in list(self._close_hooks):
            hook(fd)

    def _stat_body(self, path):
        return self._stat(self.vnodes[self._resolve(path)])

    def _fstat_body(self, fd):
        _, ino, _ = self._fd_slot(fd)
        return self._stat(self.vnodes[ino])

    def _mmap_body(self, length):
        if not isinstance(length, int) or not 0 < length < 1 << 32:
            raise InvalidArgument("bad mapping length %r" % (length,))
        length = (length + PAGE_SIZE - 1) // PAGE_SIZE * PAGE_SIZE
        raw = self._get("vma_table", 0, VMA_SLOTS * VMA_SLOT.size)
        rid = next((i for i in range(VMA_SLOTS) if not raw[i * VMA_SLOT.size]), None)
        if rid is None or length >= 1 << 32:
            raise NoSpace("mapping table is full")
        self._regions[rid] = _scrubbed(length)
        address = self._next_map
        self._next_map += length + PAGE_SIZE
        self._put("vma_table", rid * VMA_SLOT.size, VMA_SLOT.pack(1, length, address))
        return rid

    def _munmap_body(self, rid):
        if not isinstance(rid, int) or not 0 <= rid < VMA_SLOTS:
            raise InvalidArgument("bad region id %r" % (rid,))
        in_use, _, _ = VMA_SLOT.unpack(self._get("vma_table", rid * VMA_SLOT.size, VMA_SLOT.size))
        if not in_use:
            raise InvalidArgument("region %d is not mapped" % rid)
        self._put("vma_table", rid * VMA_SLOT.size, bytes(VMA_SLOT.size))
        del self._regions[rid]

    def _read_body(self, fd, n):
        flags, ino, offset = self._fd_slot(fd)
        if flags & O_ACCMODE == O_WRONLY:
            raise BadFd("descriptor %d not open for reading" % fd)
        vnode = self.vnodes[ino]
        if self._fs_kind(vnode) == KIND_DIR:
            raise IsDir("is a directory")
        if n < 0:
            raise InvalidArgument("negative read size")
        data = bytes(vnode.content[offset:offset + n])
        self._set_fd_slot(fd, flags, ino, offset + len(data))
        return data

    def _write_body(self, fd, data):
        flags, ino, offset = self._fd_slot(fd)
        if flags & O_ACCMODE == O_RDONLY:
            raise BadFd("descriptor %d not open for writing" % fd)
        vnode = self.vnodes[ino]
        if self._fs_kind(vnode) == KIND_DIR:
            raise IsDir("is a directory")
        content = vnode.content
        if flags & _FLAG_APPEND:
            offset = len(content)
        if offset > len(content):
            content.extend(bytes(offset - len(content)))
        content[offset:offset + len(data)] = data
        self._set_fd_slot(fd, flags, ino, offset + len(data))
        return len(data)

    def _mkdir_body(self, path):
        parent, name, _ = self._resolve_parent(path)
        if parent is None or self._lookup(parent, name) is not None:
            raise Exists("file exists: %s" % path)
        vnode = self._new_vnode(KIND_DIR)
        try:
            self._insert(parent, name, vnode)
        except NoSpace:
            del self.vnodes[vnode.ino]
            self._next_ino -= 1
            raise

    def _unlink_body(self, path):
        parent, name, _ = self._resolve_parent(path)
        if parent is None:
            raise IsDir("cannot unlink /")
        hit = self._lookup(parent, name)
        if hit is None:
            raise NoEnt("no such file or directory: %s" % path)
        slot, ino, kind = hit
        if kind == KIND_DIR:
            raise IsDir("is a directory: %s" % path)
        self._put("vnode_index", slot * INDEX_SLOT.size,
                  INDEX_SLOT.pack(0, 0, 0, _TOMB, b""))
        vnode = self.vnodes[ino]
        vnode.slot = None
        vnode.nlink = 0
        self._maybe_reclaim(ino, self._open_fds())

    def _mount_body(self, path):
        mounts = self._mounts()
        target = self._walk(self._components(path), {c: r for _, r, c in mounts if c})
        if self.vnodes[target].kind != KIND_DIR:
            raise NotDir("mount point is not a directory")
        if target == ROOT_INO or any(c == target for _, _, c in mounts):
            raise Busy("already a mount point: %s" % path)
        norm = b"/" + b"/".join(self._components(path))
        if len(norm) > MAX_PATH:
            raise NameTooLong("mount path longer than %d bytes" % MAX_PATH)
        used = {i for i, _, _ in mounts}
        free = next((i for i in range(MOUNT_SLOTS) if i not in used), None)
        if free is None:
            raise NoSpace("mount table is full")
        root = self._new_vnode(KIND_DIR)
        self._put("mount_table", free * MOUNT_SLOT.size, MOUNT_SLOT.pack(root.ino, target, norm))

    # -- syscalls ----------------------------------------------------------

    def _syscall(self, name, body, *args):
        return self.monitor.sandboxed_call(name, body, *args)

    def open(self, path, flags=O_RDONLY):
        return self._syscall("open", self._open_body, path, flags)

    def close(self, fd):
        return self._syscall("close", self._close_body, fd)

    def stat(self, path):
        return self._syscall("stat", self._stat_body, path)

    def fstat(self, fd):
        return self._syscall("fstat", self._fstat_body, fd)

    def mmap_anon(self, length):
        return self._syscall("mmap", self._mmap_body, length)

    def munmap(self, rid):
        return self._syscall("munmap", self._munmap_body, rid)

    def read(self, fd, n):
        return self._syscall("read", self._read_body, fd, n)

    def write(self, fd, data):
        return self._syscall("write", self._write_body, fd, bytes(data))

    def mkdir(self, path):
        return self._syscall("mkdir", self._mkdir_body, path)

    def unlink(self, path):
        return self._syscall("unlink", self._unlink_body, path)

    def mount(self, path):
        return self._syscall("mount", self._mount_body, path)

    def region(self, rid):
        """Contents of an anonymous mapping (untagged memory)."""
        return self._regions[rid]

    def register_close_hook(self, fn):
        """Call ``fn(fd)`` at the end of every close(), inside its sandbox."""
        self._close_hooks.append(fn)

    # -- test-only introspection -----------------------------------------

    def _require_hooks(self):
        if not self._test_hooks:
            raise PermissionError("internal introspection needs test_hooks=True")

    def internal_location(self, table):
        """Handle of an internal table, as a memory-scanning attacker would find it."""
        self._require_hooks()
        return self._tables[table]

    def metadata_snapshot(self):
        """Raw bytes of every metadata table, read with monitor privilege."""
        self._require_hooks()
        return {name: self.manager.privileged_read(h) for name, h in self._tables.items()}


def decode_fd_table(raw):
    return [FD_SLOT.unpack_from(raw, i * FD_SLOT.size) for i in range(FD_SLOTS)]


def compile_demo_policy():
    """Parse the bundled policy source (used to regenerate demo.acl)."""
    return parse_policy(demo_policy_text())
