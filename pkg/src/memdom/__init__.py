"""Intra-process memory domains with per-function least-privilege grants."""

from .domains import DataObjectHandle, DomainManager, FirstFitAllocator, MemoryDomain
from .keys import AccessMode, KeyRegister
from .monitor import Monitor, SandboxFrame
from .policy import (
    Acl,
    AccessRule,
    DomainDecl,
    ObjectDecl,
    ObjectSpec,
    format_policy,
    load_acl,
    parse_policy,
    serialize_acl,
)

__version__ = "0.1.0"

__all__ = [
    "AccessMode", "AccessRule", "Acl", "DataObjectHandle", "DomainDecl",
    "DomainManager", "FirstFitAllocator", "KeyRegister", "MemoryDomain",
    "Monitor", "ObjectDecl", "ObjectSpec", "SandboxFrame", "format_policy",
    "load_acl", "parse_policy", "serialize_acl",
]
