"""Exception hierarchy shared by every memdom component."""

import errno as _errno


class MemdomError(Exception):
    """Base class for all memdom errors."""


# -- policy language ---------------------------------------------------------

class PolicyError(MemdomError):
    """A policy or ACL artifact failed to parse or validate."""

    def __init__(self, message, line=None, column=None):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(self._render())

    def _render(self):
        if self.line is None:
            return self.message
        if self.column is None:
            return "line %d: %s" % (self.line, self.message)
        return "line %d, column %d: %s" % (self.line, self.column, self.message)


class PolicySyntaxError(PolicyError):
    pass


class DuplicateRule(PolicyError):
    pass


class DuplicateDomain(PolicyError):
    pass


class ConflictingObjectDomain(PolicyError):
    pass


class TooManyDomains(PolicyError):
    pass


class BadLabel(PolicyError):
    pass


class BadSize(PolicyError):
    """Declared sizes, page counts or allocation sizes out of range."""


class VersionMismatch(PolicyError):
    pass


# -- domains and keys --------------------------------------------------------

class AlreadyInitialized(MemdomError):
    pass


class NotInitialized(MemdomError):
    pass


class KeyExhaustion(MemdomError):
    pass


class OutOfMemory(MemdomError):
    pass


class ActiveSandbox(MemdomError):
    pass


class NoSuchDomain(MemdomError):
    pass


class PoolExhausted(MemdomError):
    pass


class UnknownHandle(MemdomError):
    pass


class DoubleFree(MemdomError):
    pass


class BadKey(MemdomError):
    pass


class IsolationFault(MemdomError):
    """An access to a tagged page was refused by the enforcement backend."""

    def __init__(self, key_id, op, address=None, detail=""):
        self.key_id = key_id
        self.op = op
        self.address = address
        msg = "%s access to key %d denied" % (op, key_id)
        if address is not None:
            msg += " at 0x%x" % address
        if detail:
            msg += " (%s)" % detail
        super().__init__(msg)


# -- sandbox monitor ---------------------------------------------------------

class UnknownFunction(MemdomError):
    pass


class NestedLimit(MemdomError):
    pass


class FrameOrderViolation(MemdomError):
    pass


class WrongThread(MemdomError):
    pass


class UnknownObject(MemdomError):
    pass


class SizeExceeded(MemdomError):
    pass


class NoActiveGrant(MemdomError):
    pass


class NotAllocated(MemdomError):
    pass


# -- minios ------------------------------------------------------------------

class FsError(MemdomError):
    """Filesystem-level failure of a minios syscall; carries an errno."""
    errno = _errno.EIO


class NoEnt(FsError):
    errno = _errno.ENOENT


class BadFd(FsError):
    errno = _errno.EBADF


class Exists(FsError):
    errno = _errno.EEXIST


class NotDir(FsError):
    errno = _errno.ENOTDIR


class IsDir(FsError):
    errno = _errno.EISDIR


class TooManyFds(FsError):
    errno = _errno.EMFILE


class NoSpace(FsError):
    errno = _errno.ENOSPC


class NameTooLong(FsError):
    errno = _errno.ENAMETOOLONG


class InvalidArgument(FsError):
    errno = _errno.EINVAL


class Busy(FsError):
    errno = _errno.EBUSY


class UnknownSyscall(MemdomError):
    pass
