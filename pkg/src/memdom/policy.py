"""Policy language: parse access rules into an ACL and (de)serialize it.

A policy is a line-oriented text file::

    // comment
    domain handle_dom pages=4
    object fd_table#handle_dom:1024
    path#fs_dom: > stat > statbuf#fs_dom:64

Each rule ``inputs > func > outputs`` grants ``func`` read-only access to
the domains holding its inputs and read-write access to the domains holding
its outputs.  An object spec is ``[label]#domain:[size]``; omitting the
label grants the whole domain, omitting the size skips size verification.

The compiled ACL has a canonical text form (``serialize_acl``) that is
byte-identical for equal ACLs and is read back by ``load_acl``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .errors import (
    BadLabel,
    BadSize,
    ConflictingObjectDomain,
    DuplicateDomain,
    DuplicateRule,
    PolicySyntaxError,
    TooManyDomains,
    VersionMismatch,
)

ACL_VERSION = 1
ACL_MAGIC = "ENCLAVEDOM-ACL"
DEFAULT_POOL_PAGES = 4
MAX_POOL_PAGES = 1024
MAX_DOMAINS = 15
MAX_LABEL_LEN = 64

_LABEL_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_UINT_RE = re.compile(r"[0-9]+\Z")


@dataclass(frozen=True)
class ObjectSpec:
    object_label: Optional[str]
    domain_label: str
    declared_size: Optional[int] = None

    @property
    def blanket(self) -> bool:
        return self.object_label is None

    def __str__(self):
        return "%s#%s:%s" % (self.object_label or "", self.domain_label,
                             "" if self.declared_size is None else self.declared_size)


@dataclass(frozen=True)
class AccessRule:
    func_name: str
    inputs: tuple = ()
    outputs: tuple = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class DomainDecl:
    domain_label: str
    pool_pages: int = DEFAULT_POOL_PAGES
    explicit: bool = field(default=True, compare=False)
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ObjectDecl:
    object_label: str
    domain_label: str
    declared_size: Optional[int] = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True, eq=False)
class Acl:
    """A validated policy.

    Equality ignores the order of ``domains`` and ``objects`` (they are
    sets keyed by label) but respects rule order.
    """

    domains: tuple = ()
    objects: tuple = ()
    rules: tuple = ()
    version: int = ACL_VERSION

    def _key(self):
        return (
            tuple(sorted(self.domains, key=lambda d: d.domain_label)),
            tuple(sorted(self.objects, key=lambda o: o.object_label)),
            self.rules,
            self.version,
        )

    def __eq__(self, other):
        if not isinstance(other, Acl):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def domain(self, label):
        for d in self.domains:
            if d.domain_label == label:
                return d
        return None

    def object(self, label):
        for o in self.objects:
            if o.object_label == label:
                return o
        return None

    def rule(self, func_name):
        for r in self.rules:
            if r.func_name == func_name:
                return r
        return None


def _check_label(text, line, column, what):
    if not text:
        raise PolicySyntaxError("missing %s" % what, line, column)
    if len(text) > MAX_LABEL_LEN:
        raise BadLabel("%s %r longer than %d characters" % (what, text, MAX_LABEL_LEN),
                       line, column)
    if not _LABEL_RE.match(text):
        raise BadLabel("invalid %s %r" % (what, text), line, column)
    return text


def _parse_uint(text, line, column, what):
    if not _UINT_RE.match(text):
        raise PolicySyntaxError("expected unsigned integer for %s, got %r" % (what, text),
                                line, column)
    return int(text)


def _lstrip_col(text, column):
    """Strip whitespace, returning the stripped text and its new start column."""
    stripped = text.lstrip()
    return stripped.rstrip(), column + len(text) - len(stripped)


def _parse_objspec(text, line, column):
    text, column = _lstrip_col(text, column)
    if not text:
        raise PolicySyntaxError("empty object specification", line, column)
    hash_at = text.find("#")
    if hash_at < 0:
        raise PolicySyntaxError("expected '#' in object specification %r" % text,
                                line, column)
    colon_at = text.find(":", hash_at)
    if colon_at < 0:
        raise PolicySyntaxError("expected ':' after domain label in %r" % text,
                                line, column + hash_at)
    obj = text[:hash_at]
    dom = text[hash_at + 1:colon_at]
    size_text = text[colon_at + 1:]
    obj_label = _check_label(obj, line, column, "object label") if obj else None
    dom_label = _check_label(dom, line, column + hash_at + 1, "domain label")
    size = None
    if size_text:
        size = _parse_uint(size_text, line, column + colon_at + 1, "object size")
        if size <= 0:
            raise BadSize("object size must be positive", line, column + colon_at + 1)
        if obj_label is None:
            raise BadSize("blanket domain grant cannot carry a size",
                          line, column + colon_at + 1)
    return ObjectSpec(obj_label, dom_label, size)


def _parse_objlist(text, line, column):
    if not text.strip():
        return []
    specs = []
    for part in text.split(","):
        specs.append(_parse_objspec(part, line, column))
        column += len(part) + 1
    return specs


class _Builder:
    """Accumulates declarations and rules, enforcing cross-line invariants."""

    def __init__(self, default_pages):
        self.default_pages = default_pages
        self.explicit = {}        # label -> DomainDecl
        self.implicit = {}        # label -> first-reference line
        self.domain_order = []    # every distinct domain, first appearance order
        self.objects = {}         # label -> [domain, size, line]
        self.rules = []
        self.rule_names = {}

    def _see_domain(self, label, line, column):
        if label not in self.explicit and label not in self.implicit:
            if len(self.domain_order) >= MAX_DOMAINS:
                raise TooManyDomains("policy uses more than %d domains" % MAX_DOMAINS,
                                     line, column)
            self.domain_order.append(label)

    def declare_domain(self, label, pages, line, column):
        if label in self.explicit:
            raise DuplicateDomain("domain %r already declared on line %d"
                                  % (label, self.explicit[label].line), line, column)
        self._see_domain(label, line, column)
        self.implicit.pop(label, None)
        self.explicit[label] = DomainDecl(label, pages, True, line)

    def reference_domain(self, label, line, column):
        self._see_domain(label, line, column)
        if label not in self.explicit:
            self.implicit.setdefault(label, line)

    def see_object(self, spec, line, column):
        self.reference_domain(spec.domain_label, line, column)
        if spec.blanket:
            return
        entry = self.objects.get(spec.object_label)
        if entry is None:
            self.objects[spec.object_label] = [spec.domain_label, spec.declared_size, line]
            return
        if entry[0] != spec.domain_label:
            raise ConflictingObjectDomain(
                "object %r placed in %r here but in %r on line %d"
                % (spec.object_label, spec.domain_label, entry[0], entry[2]),
                line, column)
        if spec.declared_size is not None:
            if entry[1] is not None and entry[1] != spec.declared_size:
                raise BadSize("object %r declared with size %d and %d"
                              % (spec.object_label, entry[1], spec.declared_size),
                              line, column)
            entry[1] = spec.declared_size

    def add_rule(self, func, inputs, outputs, line, column):
        if func in self.rule_names:
            raise DuplicateRule("function %r already has a rule on line %d"
                                % (func, self.rule_names[func]), line, column)
        self.rule_names[func] = line
        self.rules.append(AccessRule(func, tuple(inputs), tuple(outputs), line))

    def build(self):
        domains = [self.explicit[label] for label in self.domain_order if label in self.explicit]
        domains += [DomainDecl(label, self.default_pages, False, self.implicit[label])
                    for label in self.domain_order if label not in self.explicit]
        objects = tuple(ObjectDecl(label, dom, size, line)
                        for label, (dom, size, line) in self.objects.items())
        sizes = {o.object_label: o.declared_size for o in objects}

        def norm(spec):
            if spec.blanket:
                return spec
            return replace(spec, declared_size=sizes[spec.object_label])

        rules = tuple(replace(r, inputs=tuple(map(norm, r.inputs)),
                              outputs=tuple(map(norm, r.outputs)))
                      for r in self.rules)
        return Acl(tuple(domains), objects, rules, ACL_VERSION)


def _parse_domain_decl(body, line, column, builder):
    tokens = []
    pos = 0
    for tok in body.split():
        pos = body.index(tok, pos)
        tokens.append((tok, column + pos))
        pos += len(tok)
    if len(tokens) not in (2, 3):
        raise PolicySyntaxError("expected 'domain <label> [pages=<n>]'", line, column)
    label = _check_label(tokens[1][0], line, tokens[1][1], "domain label")
    pages = builder.default_pages
    if len(tokens) == 3:
        tok, col = tokens[2]
        if not tok.startswith("pages="):
            raise PolicySyntaxError("expected 'pages=<n>', got %r" % tok, line, col)
        pages = _parse_uint(tok[6:], line, col + 6, "pages")
        if not 1 <= pages <= MAX_POOL_PAGES:
            raise BadSize("pages must be in [1, %d], got %d" % (MAX_POOL_PAGES, pages),
                          line, col + 6)
    builder.declare_domain(label, pages, line, tokens[1][1])


def _parse_rule(body, line, column, builder):
    first = body.find(">")
    second = body.find(">", first + 1)
    if second < 0:
        raise PolicySyntaxError("expected two '>' separators in rule", line, column + first)
    extra = body.find(">", second + 1)
    if extra >= 0:
        raise PolicySyntaxError("unexpected '>' after outputs", line, column + extra)
    func, func_col = _lstrip_col(body[first + 1:second], column + first + 1)
    _check_label(func, line, func_col, "function name")
    inputs = _parse_objlist(body[:first], line, column)
    outputs = _parse_objlist(body[second + 1:], line, column + second + 1)
    for spec in inputs + outputs:
        builder.see_object(spec, line, column)
    builder.add_rule(func, inputs, outputs, line, func_col)


def parse_policy(source_text, default_pages=DEFAULT_POOL_PAGES) -> Acl:
    """Parse policy source into a validated :class:`Acl`.

    ``default_pages`` sizes domains that are referenced but never declared
    with an explicit ``pages=`` value.
    """
    if isinstance(source_text, (bytes, bytearray)):
        try:
            source_text = bytes(source_text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise PolicySyntaxError("policy is not valid UTF-8: %s" % exc) from None
    if not 1 <= default_pages <= MAX_POOL_PAGES:
        raise BadSize("default pages must be in [1, %d]" % MAX_POOL_PAGES)

    builder = _Builder(default_pages)
    for lineno, raw in enumerate(source_text.split("\n"), 1):
        text = raw[:-1] if raw.endswith("\r") else raw
        cut = text.find("//")
        if cut >= 0:
            text = text[:cut]
        if not text.strip():
            continue
        if ">" in text:
            _parse_rule(text, lineno, 1, builder)
            continue
        body, col = _lstrip_col(text, 1)
        keyword = body.split(None, 1)[0]
        if keyword == "domain":
            _parse_domain_decl(body, lineno, col, builder)
        elif keyword == "object":
            spec = _parse_objspec(body[len("object"):], lineno, col + len("object"))
            if spec.blanket:
                raise PolicySyntaxError("object declaration needs an object label",
                                        lineno, col)
            builder.see_object(spec, lineno, col)
        else:
            raise PolicySyntaxError("expected a rule, 'domain' or 'object' line",
                                    lineno, col)
    return builder.build()


# -- canonical artifact ------------------------------------------------------

def _encode_specs(specs):
    if not specs:
        return "-"
    return ",".join("*" + s.domain_label if s.blanket else s.object_label for s in specs)


def serialize_acl(acl: Acl) -> bytes:
    out = ["%s v%d" % (ACL_MAGIC, acl.version)]
    for d in sorted(acl.domains, key=lambda d: d.domain_label):
        out.append("domain %s pages=%d" % (d.domain_label, d.pool_pages))
    for o in sorted(acl.objects, key=lambda o: o.object_label):
        size = "*" if o.declared_size is None else str(o.declared_size)
        out.append("object %s domain=%s size=%s" % (o.object_label, o.domain_label, size))
    for r in acl.rules:
        out.append("rule func=%s ro=%s rw=%s"
                   % (r.func_name, _encode_specs(r.inputs), _encode_specs(r.outputs)))
    out.append("end")
    return ("\n".join(out) + "\n").encode("utf-8")


def _kv(token, key, line):
    prefix = key + "="
    if not token.startswith(prefix):
        raise PolicySyntaxError("expected %s=..., got %r" % (key, token), line)
    return token[len(prefix):]


def load_acl(data) -> Acl:
    """Inverse of :func:`serialize_acl`."""
    try:
        text = bytes(data).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise PolicySyntaxError("ACL is not valid UTF-8: %s" % exc) from None
    if not text.endswith("\n"):
        raise PolicySyntaxError("ACL truncated: missing final newline")
    lines = text[:-1].split("\n")
    header = re.match(r"%s v([0-9]+)\Z" % ACL_MAGIC, lines[0])
    if not header:
        raise PolicySyntaxError("missing %s header" % ACL_MAGIC, 1)
    if int(header.group(1)) != ACL_VERSION:
        raise VersionMismatch("ACL version v%s, expected v%d" % (header.group(1), ACL_VERSION), 1)
    if lines[-1] != "end" or len(lines) < 2:
        raise PolicySyntaxError("ACL truncated: missing 'end' line", len(lines))

    domains, objects, rules = {}, {}, []
    rule_names = set()
    section = 0
    for lineno, line in enumerate(lines[1:-1], 2):
        tokens = line.split(" ")
        kind = tokens[0]
        order = {"domain": 0, "object": 1, "rule": 2}.get(kind)
        if order is None:
            raise PolicySyntaxError("unknown record %r" % kind, lineno)
        if order < section:
            raise PolicySyntaxError("%s record out of order" % kind, lineno)
        section = order
        if kind == "domain":
            if len(tokens) != 3:
                raise PolicySyntaxError("malformed domain record", lineno)
            label = _check_label(tokens[1], lineno, None, "domain label")
            pages = _parse_uint(_kv(tokens[2], "pages", lineno), lineno, None, "pages")
            if not 1 <= pages <= MAX_POOL_PAGES:
                raise BadSize("pages out of range", lineno)
            if label in domains:
                raise DuplicateDomain("domain %r repeated" % label, lineno)
            if len(domains) >= MAX_DOMAINS:
                raise TooManyDomains("more than %d domains" % MAX_DOMAINS, lineno)
            domains[label] = DomainDecl(label, pages, True, lineno)
        elif kind == "object":
            if len(tokens) != 4:
                raise PolicySyntaxError("malformed object record", lineno)
            label = _check_label(tokens[1], lineno, None, "object label")
            dom = _kv(tokens[2], "domain", lineno)
            if dom not in domains:
                raise PolicySyntaxError("object %r in undeclared domain %r" % (label, dom), lineno)
            size_text = _kv(tokens[3], "size", lineno)
            size = None
            if size_text != "*":
                size = _parse_uint(size_text, lineno, None, "size")
                if size <= 0:
                    raise BadSize("object size must be positive", lineno)
            if label in objects:
                raise ConflictingObjectDomain("object %r repeated" % label, lineno)
            objects[label] = ObjectDecl(label, dom, size, lineno)
        else:
            if len(tokens) != 4:
                raise PolicySyntaxError("malformed rule record", lineno)
            func = _check_label(_kv(tokens[1], "func", lineno), lineno, None, "function name")
            if func in rule_names:
                raise DuplicateRule("function %r repeated" % func, lineno)
            rule_names.add(func)
            sides = []
            for tok, key in ((tokens[2], "ro"), (tokens[3], "rw")):
                value = _kv(tok, key, lineno)
                specs = []
                if value != "-":
                    for item in value.split(","):
                        if item.startswith("*"):
                            if item[1:] not in domains:
                                raise PolicySyntaxError("blanket grant on undeclared domain %r"
                                                        % item[1:], lineno)
                            specs.append(ObjectSpec(None, item[1:], None))
                        elif item in objects:
                            o = objects[item]
                            specs.append(ObjectSpec(o.object_label, o.domain_label,
                                                    o.declared_size))
                        else:
                            raise PolicySyntaxError("rule references unknown object %r"
                                                    % item, lineno)
                sides.append(tuple(specs))
            rules.append(AccessRule(func, sides[0], sides[1], lineno))
    return Acl(tuple(domains.values()), tuple(objects.values()), tuple(rules), ACL_VERSION)


def format_policy(acl: Acl) -> str:
    """Render an ACL back into policy source that parses to an equal ACL."""
    out = []
    for d in acl.domains:
        out.append("domain %s pages=%d" % (d.domain_label, d.pool_pages))
    for o in acl.objects:
        out.append("object %s" % ObjectSpec(o.object_label, o.domain_label, o.declared_size))
    for r in acl.rules:
        ins = ", ".join(map(str, r.inputs))
        outs = ", ".join(map(str, r.outputs))
        out.append(("%s > %s > %s" % (ins, r.func_name, outs)).strip())
    return "\n".join(out) + "\n"


def referenced_domains(specs: Iterable[ObjectSpec]):
    seen = []
    for s in specs:
        if s.domain_label not in seen:
            seen.append(s.domain_label)
    return seen
