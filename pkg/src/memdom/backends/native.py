"""ctypes bindings for the host memory-protection interfaces.

Mediated accesses are performed by the kernel through a pipe: copying a
region into (or out of) a pipe makes the kernel touch the pages under the
calling thread's page permissions and protection-key rights, and a refused
access comes back as ``EFAULT`` instead of a fatal signal.
"""

from __future__ import annotations

import ctypes
import errno
import fcntl
import os
import sys
import threading

from ..errors import IsolationFault, OutOfMemory

PROT_NONE = 0
PROT_READ = 1
PROT_WRITE = 2
MAP_PRIVATE = 0x02
MAP_ANONYMOUS = 0x20
MAP_FAILED = ctypes.c_void_p(-1).value

PKEY_DISABLE_ACCESS = 0x1
PKEY_DISABLE_WRITE = 0x2

_CHUNK = 32768

_libc = None


def libc():
    global _libc
    if _libc is None:
        if not sys.platform.startswith("linux"):
            raise OSError("native backends require Linux")
        lib = ctypes.CDLL(None, use_errno=True)
        lib.mmap.restype = ctypes.c_void_p
        lib.mmap.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int,
                             ctypes.c_int, ctypes.c_int, ctypes.c_long]
        lib.munmap.argtypes = [ctypes.c_void_p, ctypes.c_size_t]
        lib.mprotect.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int]
        lib.read.argtypes = [ctypes.c_int, ctypes.c_void_p, ctypes.c_size_t]
        lib.read.restype = ctypes.c_ssize_t
        lib.write.argtypes = [ctypes.c_int, ctypes.c_void_p, ctypes.c_size_t]
        lib.write.restype = ctypes.c_ssize_t
        if hasattr(lib, "pkey_alloc"):
            lib.pkey_alloc.argtypes = [ctypes.c_uint, ctypes.c_uint]
            lib.pkey_free.argtypes = [ctypes.c_int]
            lib.pkey_mprotect.argtypes = [ctypes.c_void_p, ctypes.c_size_t,
                                          ctypes.c_int, ctypes.c_int]
            lib.pkey_set.argtypes = [ctypes.c_int, ctypes.c_uint]
            lib.pkey_get.argtypes = [ctypes.c_int]
        _libc = lib
    return _libc


def _oserror(what):
    err = ctypes.get_errno()
    return OSError(err, "%s: %s" % (what, os.strerror(err)))


def mmap_anon(length: int) -> int:
    addr = libc().mmap(None, length, PROT_READ | PROT_WRITE,
                       MAP_PRIVATE | MAP_ANONYMOUS, -1, 0)
    if addr is None or addr == MAP_FAILED:
        raise OutOfMemory("mmap of %d bytes failed: %s"
                          % (length, os.strerror(ctypes.get_errno())))
    return addr


def munmap(addr: int, length: int) -> None:
    if libc().munmap(addr, length) != 0:
        raise _oserror("munmap")


def mprotect(addr: int, length: int, prot: int) -> None:
    if libc().mprotect(addr, length, prot) != 0:
        raise _oserror("mprotect")


class KernelCopier:
    """Copies between user memory and Python bytes via per-thread pipes."""

    def __init__(self):
        self._local = threading.local()
        self._all = []
        self._lock = threading.Lock()

    def _pipe(self):
        fds = getattr(self._local, "fds", None)
        if fds is None:
            r, w = os.pipe()
            fcntl.fcntl(r, fcntl.F_SETFL, fcntl.fcntl(r, fcntl.F_GETFL) | os.O_NONBLOCK)
            fds = self._local.fds = (r, w)
            with self._lock:
                self._all.append(fds)
        return fds

    def _drain(self, r):
        try:
            while os.read(r, _CHUNK):
                pass
        except BlockingIOError:
            pass

    def read(self, address, size, key_id=0):
        r, w = self._pipe()
        lib = libc()
        out = bytearray()
        done = 0
        while done < size:
            n = min(_CHUNK, size - done)
            got = lib.write(w, address + done, n)
            if got < 0:
                err = ctypes.get_errno()
                if err == errno.EFAULT:
                    raise IsolationFault(key_id, "read", address + done)
                raise OSError(err, os.strerror(err))
            out += os.read(r, got)
            done += got
        return bytes(out)

    def write(self, address, data, key_id=0):
        r, w = self._pipe()
        lib = libc()
        view = memoryview(bytes(data))
        done = 0
        while done < len(view):
            chunk = view[done:done + _CHUNK]
            os.write(w, chunk)
            got = 0
            while got < len(chunk):
                n = lib.read(r, address + done + got, len(chunk) - got)
                if n < 0:
                    err = ctypes.get_errno()
                    self._drain(r)
                    if err == errno.EFAULT:
                        raise IsolationFault(key_id, "write", address + done + got)
                    raise OSError(err, os.strerror(err))
                got += n
            done += got

    def close(self):
        with self._lock:
            for r, w in self._all:
                os.close(r)
                os.close(w)
            self._all.clear()
        self._local = threading.local()


def raw_read(address: int, size: int) -> bytes:
    """Direct load; faults the process if the page is inaccessible."""
    return ctypes.string_at(address, size)


def raw_write(address: int, data) -> None:
    """Direct store; faults the process if the page is not writable."""
    ctypes.memmove(address, bytes(data), len(data))
