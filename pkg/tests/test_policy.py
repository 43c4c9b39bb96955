import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memdom import errors
from memdom.policy import (
    Acl,
    ObjectSpec,
    format_policy,
    load_acl,
    parse_policy,
    serialize_acl,
)

from oracles import gen_policy


def test_blanket_read_only_rule():
    acl = parse_policy("#fs_dom: > stat >")
    rule = acl.rule("stat")
    assert rule.inputs == (ObjectSpec(None, "fs_dom", None),)
    assert rule.inputs[0].blanket
    assert rule.outputs == ()


def test_empty_rule_grants_nothing():
    acl = parse_policy("> noop >")
    rule = acl.rule("noop")
    assert rule.inputs == () and rule.outputs == ()
    assert acl.domains == ()


def test_sized_and_unsized_specs():
    acl = parse_policy("key#crypto:32 > sign > sig#crypto:")
    rule = acl.rule("sign")
    assert rule.inputs == (ObjectSpec("key", "crypto", 32),)
    assert rule.outputs == (ObjectSpec("sig", "crypto", None),)


def test_rule_order_and_implicit_domains():
    acl = parse_policy("domain z_dom pages=2\n"
                       "a#b_dom: > f2 >\n"
                       "> f1 > c#a_dom:8, #z_dom:\n")
    assert [r.func_name for r in acl.rules] == ["f2", "f1"]
    assert [(d.domain_label, d.pool_pages) for d in acl.domains] == [
        ("z_dom", 2), ("b_dom", 4), ("a_dom", 4)]


def test_default_pages_only_applies_to_implicit_domains():
    acl = parse_policy("domain a pages=2\nx#a: > f > y#b:", default_pages=9)
    assert acl.domain("a").pool_pages == 2
    assert acl.domain("b").pool_pages == 9


def test_whitespace_comments_and_crlf_are_insignificant():
    a = parse_policy("x#d:4,y#d: > f > z#e:\n")
    b = parse_policy("// header\r\n  x#d:4 ,  y#d:   >  f  >  z#e:   // tail\r\n\r\n")
    assert a == b
    assert serialize_acl(a) == serialize_acl(b)


@pytest.mark.parametrize("source, exc, line, column", [
    ("a#d: > f > b#d:\na#d: > f >", errors.DuplicateRule, 2, 8),
    ("domain d\ndomain d pages=3", errors.DuplicateDomain, 2, 8),
    ("x#a: > f >\n> g > x#b:", errors.ConflictingObjectDomain, 2, 1),
    ("9bad#d: > f >", errors.BadLabel, 1, 1),
    ("x#d:0 > f >", errors.BadSize, 1, 5),
    ("#d:12 > f >", errors.BadSize, 1, 4),
    ("x#d:4 > f >\n> g > x#d:8", errors.BadSize, 2, 1),
    ("domain d pages=0", errors.BadSize, 1, 16),
    ("domain d pages=1025", errors.BadSize, 1, 16),
    ("x#d: > f", errors.PolicySyntaxError, 1, 6),
    ("x#d > f >", errors.PolicySyntaxError, 1, 2),
    ("x > f >", errors.PolicySyntaxError, 1, 1),
    ("x#d: > f > > g", errors.PolicySyntaxError, 1, 12),
    ("  garbage", errors.PolicySyntaxError, 1, 3),
    ("> f g >", errors.BadLabel, 1, 3),
    ("x#d:12a > f >", errors.PolicySyntaxError, 1, 5),
])
def test_errors_carry_position(source, exc, line, column):
    with pytest.raises(exc) as info:
        parse_policy(source)
    assert info.value.line == line
    assert info.value.column == column


def test_label_length_limit():
    parse_policy("%s#d: > f >" % ("o" * 64))
    with pytest.raises(errors.BadLabel):
        parse_policy("%s#d: > f >" % ("o" * 65))


def test_sixteen_domains_rejected():
    ok = "\n".join("> f%d > #d%d:" % (i, i) for i in range(15))
    assert len(parse_policy(ok).domains) == 15
    with pytest.raises(errors.TooManyDomains) as info:
        parse_policy(ok + "\n> f15 > #d15:")
    assert info.value.line == 16


@given(st.integers(16, 40))
def test_domain_count_bound(n):
    src = "\n".join("domain d%d" % i for i in range(n))
    with pytest.raises(errors.TooManyDomains):
        parse_policy(src)


def test_object_sizes_merge_across_specs():
    acl = parse_policy("buf#d: > f >\n> g > buf#d:64")
    assert acl.object("buf").declared_size == 64
    assert acl.rule("f").inputs[0].declared_size == 64


def test_object_declaration_line():
    acl = parse_policy("object spare#d:128\n> f > #d:")
    assert acl.object("spare").declared_size == 128
    with pytest.raises(errors.PolicySyntaxError):
        parse_policy("object #d:")


# Each row of the rule-semantics table has its own AST shape.

def test_shape_no_writable_objects():
    rule = parse_policy("a#d:8 > f >").rule("f")
    assert rule.inputs and not rule.outputs


def test_shape_all_writable_objects():
    rule = parse_policy("> f > a#d:8, b#e:").rule("f")
    assert not rule.inputs and len(rule.outputs) == 2


def test_shape_blanket_access():
    rule = parse_policy("#d: > f >").rule("f")
    assert rule.inputs[0].object_label is None


def test_shape_skip_size_verification():
    rule = parse_policy("a#d: > f >").rule("f")
    assert rule.inputs[0].object_label == "a" and rule.inputs[0].declared_size is None


# -- canonical artifact -----------------------------------------------------

def test_empty_acl_serialization():
    assert serialize_acl(Acl()) == b"ENCLAVEDOM-ACL v1\nend\n"
    assert load_acl(serialize_acl(Acl())) == Acl()
    assert serialize_acl(parse_policy("")) == b"ENCLAVEDOM-ACL v1\nend\n"


def test_canonical_format_lines():
    acl = parse_policy("domain zz pages=3\nk#zz:32 > sign > sig#crypto:, #zz:\n> noop >")
    assert serialize_acl(acl).decode().splitlines() == [
        "ENCLAVEDOM-ACL v1",
        "domain crypto pages=4",
        "domain zz pages=3",
        "object k domain=zz size=32",
        "object sig domain=crypto size=*",
        "rule func=sign ro=k rw=sig,*zz",
        "rule func=noop ro=- rw=-",
        "end",
    ]


def test_serialization_ignores_declaration_order():
    a = parse_policy("domain a\ndomain b\nobject x#a:8\nobject y#b:\n> f > x#a:, y#b:")
    b = parse_policy("domain b\ndomain a\nobject y#b:\nobject x#a:8\n> f > x#a:, y#b:")
    assert serialize_acl(a) == serialize_acl(b)


def test_every_truncation_is_rejected():
    data = serialize_acl(parse_policy("k#c:32 > sign > sig#c:\n> f > #c:"))
    for cut in range(len(data)):
        with pytest.raises(errors.PolicySyntaxError):
            load_acl(data[:cut])


def test_wrong_version_rejected():
    data = serialize_acl(parse_policy("> f > #c:"))
    with pytest.raises(errors.VersionMismatch):
        load_acl(data.replace(b"v1\n", b"v2\n", 1))


@pytest.mark.parametrize("mutation", [
    (b"domain c pages=4\n", b""),                  # object in undeclared domain
    (b"rule func=f", b"rule fn=f"),
    (b"pages=4", b"pages=x"),
    (b"ENCLAVEDOM", b"ENCLAVEDOX"),
    (b"end\n", b"end\nend\n"),
])
def test_malformed_artifact_rejected(mutation):
    data = serialize_acl(parse_policy("x#c:8 > f > #c:"))
    with pytest.raises(errors.PolicyError):
        load_acl(data.replace(*mutation))


@settings(max_examples=200, deadline=None)
@given(st.randoms(use_true_random=False))
def test_round_trip_properties(rng):
    src = gen_policy(rng)
    acl = parse_policy(src)
    data = serialize_acl(acl)
    loaded = load_acl(data)
    assert loaded == acl
    assert serialize_acl(loaded) == data
    reparsed = parse_policy(format_policy(acl))
    assert reparsed == acl
    assert serialize_acl(reparsed) == data


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_object_domain_uniqueness(rng):
    src = gen_policy(rng)
    acl = parse_policy(src)
    if not acl.objects or len(acl.domains) < 2:
        return
    obj = acl.objects[0]
    other = next(d.domain_label for d in acl.domains if d.domain_label != obj.domain_label)
    with pytest.raises(errors.ConflictingObjectDomain):
        parse_policy(src + "\n> zz_conflict > %s#%s:\n" % (obj.object_label, other))


def test_generator_is_reproducible():
    assert gen_policy(random.Random(7)) == gen_policy(random.Random(7))
