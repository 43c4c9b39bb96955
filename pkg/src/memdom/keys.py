"""Protection-key access modes and the per-thread key register model."""

from __future__ import annotations

import enum

NUM_KEYS = 16
DEFAULT_KEY = 0

# PKRU layout: two bits per key, access-disable (AD) then write-disable (WD).
_AD = 0b01
_WD = 0b10


class AccessMode(enum.IntEnum):
    NONE = 0
    READ_ONLY = 1
    READ_WRITE = 2

    def allows(self, op: str) -> bool:
        if op == "read":
            return self >= AccessMode.READ_ONLY
        if op == "write":
            return self == AccessMode.READ_WRITE
        raise ValueError("unknown access op %r" % op)


class KeyRegister:
    """Access modes for the 16 protection keys of one thread.

    Key 0 tags untagged memory and is pinned to READ_WRITE; a fresh
    register denies everything else.
    """

    __slots__ = ("_modes",)

    def __init__(self):
        self._modes = [AccessMode.NONE] * NUM_KEYS
        self._modes[DEFAULT_KEY] = AccessMode.READ_WRITE

    def __getitem__(self, key_id: int) -> AccessMode:
        return self._modes[key_id]

    def set(self, key_id: int, mode: AccessMode) -> None:
        if not 1 <= key_id < NUM_KEYS:
            raise ValueError("key %d is not assignable" % key_id)
        self._modes[key_id] = AccessMode(mode)

    def allows(self, key_id: int, op: str) -> bool:
        return self._modes[key_id].allows(op)

    def modes(self):
        return tuple(self._modes)

    def to_pkru(self) -> int:
        value = 0
        for key, mode in enumerate(self._modes):
            if mode == AccessMode.NONE:
                bits = _AD | _WD
            elif mode == AccessMode.READ_ONLY:
                bits = _WD
            else:
                bits = 0
            value |= bits << (2 * key)
        return value

    @classmethod
    def from_pkru(cls, value: int) -> "KeyRegister":
        reg = cls()
        for key in range(1, NUM_KEYS):
            bits = (value >> (2 * key)) & 0b11
            if bits & _AD:
                reg._modes[key] = AccessMode.NONE
            elif bits & _WD:
                reg._modes[key] = AccessMode.READ_ONLY
            else:
                reg._modes[key] = AccessMode.READ_WRITE
        return reg

    def __repr__(self):
        return "KeyRegister(pkru=0x%08x)" % self.to_pkru()
