"""``aclgen``: compile policy files to the canonical ACL artifact, and lint them."""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from typing import List, Optional

from .backends import PAGE_SIZE
from .domains import round_up
from .errors import PolicyError
from .policy import DEFAULT_POOL_PAGES, MAX_POOL_PAGES, parse_policy, serialize_acl


@dataclass
class Finding:
    severity: str          # "warn" | "error"
    code: str
    message: str
    line: Optional[int] = None

    def as_dict(self):
        return {"severity": self.severity, "code": self.code,
                "line": self.line, "message": self.message}


@dataclass
class LintReport:
    findings: List[Finding] = field(default_factory=list)

    @property
    def errors(self):
        return [f for f in self.findings if f.severity == "error"]

    @property
    def exit_status(self):
        return 1 if self.errors else 0


def _read_policy(path):
    with open(path, "rb") as f:
        return f.read()


def compile_policy(policy_path, out_path, default_pages=DEFAULT_POOL_PAGES, stderr=None):
    """Compile ``policy_path`` into ``out_path``; returns the exit status."""
    stderr = stderr or sys.stderr
    try:
        acl = parse_policy(_read_policy(policy_path), default_pages=default_pages)
    except PolicyError as exc:
        print("%s:%s: error: %s: %s" % (policy_path, exc.line or 0,
                                        type(exc).__name__, exc.message), file=stderr)
        return 1
    except OSError as exc:
        print("%s: error: %s" % (policy_path, exc.strerror), file=stderr)
        return 1
    data = serialize_acl(acl)
    if out_path == "-":
        sys.stdout.buffer.write(data)
    else:
        with open(out_path, "wb") as f:
            f.write(data)
    return 0


def lint_source(source) -> LintReport:
    report = LintReport()
    try:
        acl = parse_policy(source)
    except PolicyError as exc:
        report.findings.append(Finding("error", type(exc).__name__, exc.message, exc.line))
        return report

    referenced = set()
    for rule in acl.rules:
        for spec in rule.inputs + rule.outputs:
            if not spec.blanket:
                referenced.add(spec.object_label)

    demand = defaultdict(int)
    for obj in acl.objects:
        if obj.declared_size is not None:
            demand[obj.domain_label] += round_up(obj.declared_size)
        if obj.object_label not in referenced:
            report.findings.append(Finding(
                "warn", "UnusedObject",
                "object %r is never referenced by a rule" % obj.object_label, obj.line))
    for dom in acl.domains:
        capacity = dom.pool_pages * PAGE_SIZE
        if demand[dom.domain_label] > capacity:
            report.findings.append(Finding(
                "warn", "CapacityWarn",
                "declared objects in %r need %d bytes but the pool holds %d"
                % (dom.domain_label, demand[dom.domain_label], capacity), dom.line))

    for rule in acl.rules:
        for side, specs in (("ro", rule.inputs), ("rw", rule.outputs)):
            blanket = {s.domain_label for s in specs if s.blanket}
            for spec in specs:
                if not spec.blanket and spec.domain_label in blanket:
                    report.findings.append(Finding(
                        "warn", "ShadowedObject",
                        "%s: blanket %s grant on %r already covers object %r"
                        % (rule.func_name, side, spec.domain_label, spec.object_label),
                        rule.line))
        ro_blanket = {s.domain_label for s in rule.inputs if s.blanket}
        rw_blanket = {s.domain_label for s in rule.outputs if s.blanket}
        for spec in rule.inputs:
            if not spec.blanket and spec.domain_label in rw_blanket:
                report.findings.append(Finding(
                    "warn", "ShadowedObject",
                    "%s: blanket rw grant on %r already covers object %r"
                    % (rule.func_name, spec.domain_label, spec.object_label), rule.line))
        for spec in rule.outputs:
            if not spec.blanket and spec.domain_label in ro_blanket:
                report.findings.append(Finding(
                    "warn", "BlanketRoObjectRw",
                    "%s: blanket ro grant on %r is widened to rw by object %r"
                    % (rule.func_name, spec.domain_label, spec.object_label), rule.line))
    return report


def lint(policy_path) -> LintReport:
    try:
        source = _read_policy(policy_path)
    except OSError as exc:
        return LintReport([Finding("error", "IOError", exc.strerror)])
    return lint_source(source)


def _pages(text):
    value = int(text)
    if not 1 <= value <= MAX_POOL_PAGES:
        raise argparse.ArgumentTypeError("pages must be in [1, %d]" % MAX_POOL_PAGES)
    return value


def main(argv=None):
    parser = argparse.ArgumentParser(prog="aclgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    c = sub.add_parser("compile", help="compile a policy to the canonical ACL")
    c.add_argument("policy")
    c.add_argument("-o", "--output", required=True, help="output path, '-' for stdout")
    c.add_argument("--pages", type=_pages, default=DEFAULT_POOL_PAGES,
                   help="pool size for domains without an explicit pages= (default 4)")
    l = sub.add_parser("lint", help="report policy problems")
    l.add_argument("policy")
    l.add_argument("--json", action="store_true")
    args = parser.parse_args(argv)

    if args.command == "compile":
        return compile_policy(args.policy, args.output, args.pages)

    report = lint(args.policy)
    if args.json:
        print(json.dumps([f.as_dict() for f in report.findings], indent=2))
    else:
        for f in report.findings:
            print("%s:%s: %s: %s: %s" % (args.policy, f.line or 0, f.severity,
                                         f.code, f.message))
    return report.exit_status


if __name__ == "__main__":
    sys.exit(main())
