"""``minios-demo``: run the descriptor-table attack against minios."""

from __future__ import annotations

import argparse
import sys

from ..backends import BACKEND_NAMES, backend_available, resolve_backend_name
from .attack import VARIANTS, run_attack


def main(argv=None):
    parser = argparse.ArgumentParser(prog="minios-demo")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run-attack", help="run an adversarial library against minios")
    p.add_argument("--mode", choices=("vanilla", "protected"), required=True)
    p.add_argument("--backend", choices=BACKEND_NAMES, default="checked")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="fd-table")
    p.add_argument("--access", choices=("auto", "raw", "mediated"), default="auto",
                   help="raw stores fault the process on page backends")
    args = parser.parse_args(argv)

    backend = resolve_backend_name(args.backend)
    if not backend_available(backend):
        print("backend %s is not available on this host" % backend, file=sys.stderr)
        return 2
    if backend == "checked" and args.access == "raw":
        parser.error("the checked backend cannot intercept raw stores")
    print("attack=%s mode=%s backend=%s" % (args.variant, args.mode, backend), flush=True)
    outcome = run_attack(args.mode, backend, args.variant, args.access)
    print("AttackOutcome: %s" % outcome, flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
