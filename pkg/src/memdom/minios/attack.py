"""A malicious in-process library that tampers with minios metadata.

The library makes no syscalls to reach the tables.  It finds them the way
code sharing an address space can (here through the test-only location
accessor) and writes to them directly.
"""

from __future__ import annotations

import enum

from ..backends import native
from ..errors import IsolationFault
from .fs import FD_SLOT, MOUNT_SLOT, O_CREAT, O_RDWR, O_RDONLY, MiniOS

FORGED_CONTENT = b"attacker-controlled bytes"
VICTIM_CONTENT = b"legitimate file contents"
VICTIM_PATH = "/victim.txt"


class AttackOutcome(enum.Enum):
    SUCCEEDED = "Succeeded"
    DENIED = "Denied"

    def __str__(self):
        return self.value


def _tamper(os_, handle, offset, data, access):
    if access == "raw":
        # Plain store into the shared address space; on page backends a
        # denied store terminates the process.
        native.raw_write(handle.address + offset, data)
    else:
        os_.manager.write(handle, offset, data)


def forge_fd_slot(os_: MiniOS, victim_fd: int, access: str = "mediated") -> AttackOutcome:
    """Point ``victim_fd`` at a file the attacker controls."""
    bait = os_.open("/.bait", O_CREAT | O_RDWR)
    os_.write(bait, FORGED_CONTENT)
    bait_ino = os_.fstat(bait).st_ino
    os_.close(bait)

    table = os_.internal_location("fd_table")
    before = os_.metadata_snapshot()["fd_table"]
    forged = FD_SLOT.pack(1, O_RDWR, 0, bait_ino, 0)
    try:
        _tamper(os_, table, victim_fd * FD_SLOT.size, forged, access)
    except IsolationFault:
        if os_.metadata_snapshot()["fd_table"] != before:
            return AttackOutcome.SUCCEEDED
        return AttackOutcome.DENIED
    if os_.read(victim_fd, len(FORGED_CONTENT)) == FORGED_CONTENT:
        return AttackOutcome.SUCCEEDED
    return AttackOutcome.DENIED


def hijacked_close_callback(os_: MiniOS, access: str = "mediated") -> AttackOutcome:
    """Confused deputy: abuse close()'s sandbox to rewrite the mount table.

    close() only holds handle_dom, so a write to fs_dom from a callback it
    runs must still be refused.
    """
    mounts = os_.internal_location("mount_table")
    before = os_.metadata_snapshot()["mount_table"]
    forged = MOUNT_SLOT.pack(0xBAD, 0, b"/")
    landed = []

    def hook(fd):
        _tamper(os_, mounts, 0, forged, access)
        landed.append(fd)

    os_.register_close_hook(hook)
    fd = os_.open(VICTIM_PATH, O_RDONLY)
    try:
        os_.close(fd)
    except IsolationFault:
        pass
    finally:
        os_._close_hooks.remove(hook)
    if landed and os_.metadata_snapshot()["mount_table"] != before:
        return AttackOutcome.SUCCEEDED
    return AttackOutcome.DENIED


def adversarial_corrupt_fd_table(os_: MiniOS, victim_fd: int = None,
                                 access: str = "mediated") -> AttackOutcome:
    if victim_fd is None:
        victim_fd = os_.open(VICTIM_PATH, O_RDONLY)
    return forge_fd_slot(os_, victim_fd, access)


VARIANTS = {
    "fd-table": adversarial_corrupt_fd_table,
    "hijacked-close": hijacked_close_callback,
}


def run_attack(mode: str, backend: str = "checked", variant: str = "fd-table",
               access: str = "auto") -> AttackOutcome:
    """Boot a minios, open a victim file and run one attack variant against it."""
    if access == "auto":
        access = "mediated" if backend == "checked" else "raw"
    os_ = MiniOS(backend=backend, mode=mode, test_hooks=True)
    try:
        fd = os_.open(VICTIM_PATH, O_CREAT | O_RDWR)
        os_.write(fd, VICTIM_CONTENT)
        os_.close(fd)
        if variant == "fd-table":
            victim = os_.open(VICTIM_PATH, O_RDONLY)
            return forge_fd_slot(os_, victim, access)
        return VARIANTS[variant](os_, access=access)
    finally:
        os_.shutdown()
