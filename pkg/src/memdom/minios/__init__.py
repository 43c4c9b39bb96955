from .attack import AttackOutcome, adversarial_corrupt_fd_table, hijacked_close_callback, run_attack
from .fs import (
    O_APPEND,
    O_CREAT,
    O_EXCL,
    O_RDONLY,
    O_RDWR,
    O_TRUNC,
    O_WRONLY,
    SYSCALLS,
    MiniOS,
    StatBuf,
    demo_acl,
    demo_policy_text,
)

__all__ = [
    "AttackOutcome", "MiniOS", "StatBuf", "SYSCALLS", "adversarial_corrupt_fd_table",
    "demo_acl", "demo_policy_text", "hijacked_close_callback", "run_attack",
    "O_APPEND", "O_CREAT", "O_EXCL", "O_RDONLY", "O_RDWR", "O_TRUNC", "O_WRONLY",
]
