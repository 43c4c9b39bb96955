import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memdom import errors
from memdom.domains import POISON_BYTE, DomainManager, FirstFitAllocator
from memdom.keys import AccessMode
from memdom.policy import parse_policy

from conftest import available_backends
from oracles import IntervalOracle, overlaps

TWO = parse_policy("domain handle_dom\ndomain fs_dom\n> f > #handle_dom:, #fs_dom:\n#fs_dom: > g >")


@pytest.fixture
def mgr():
    m = DomainManager(TWO, "checked")
    yield m
    if m.active:
        m.teardown()


def test_init_provisions_distinct_keys(mgr):
    keys = mgr.key_ids()
    assert len(set(keys)) == 2 and all(1 <= k <= 15 for k in keys)
    assert mgr.domain("handle_dom").capacity == 16384
    assert mgr.domain("fs_dom").capacity == 16384
    assert all(mgr.access(k) == AccessMode.NONE for k in keys)


def test_empty_acl_init():
    m = DomainManager(parse_policy(""))
    assert m.domains == {}
    m.teardown()


def test_fifteen_domains_then_exhaustion():
    src = "\n".join("domain d%d" % i for i in range(15))
    m = DomainManager(parse_policy(src))
    assert sorted(m.key_ids()) == list(range(1, 16))
    m.teardown()
    acl = parse_policy(src)
    from memdom.policy import Acl, DomainDecl
    bigger = Acl(acl.domains + (DomainDecl("d15"),), (), ())
    with pytest.raises(errors.KeyExhaustion):
        DomainManager(bigger)


def test_teardown_audit_and_double_teardown():
    m = DomainManager(TWO)
    backend = m.backend
    assert backend.live_pages() == 8
    m.teardown()
    assert backend.live_pages() == 0
    assert backend.provisioned_keys() == []
    with pytest.raises(errors.NotInitialized):
        m.teardown()
    with pytest.raises(errors.NotInitialized):
        m.domain("fs_dom")


def test_teardown_with_open_frame():
    from memdom.monitor import Monitor
    m = DomainManager(TWO)
    mon = Monitor(m)
    frame = mon.grant_data_access("g")
    with pytest.raises(errors.ActiveSandbox):
        m.teardown()
    mon.revoke_data_access(frame)
    m.teardown()


def test_reference_object_sizes_fit(mgr):
    a = mgr.domain_alloc("fs_dom", 1030)
    b = mgr.domain_alloc("fs_dom", 98)
    assert a.offset == 0 and b.offset == 1040
    assert a.address % 16 == 0 and b.address % 16 == 0


def test_exact_capacity_then_exhausted(mgr):
    mgr.domain_alloc("fs_dom", 4 * 4096)
    with pytest.raises(errors.PoolExhausted):
        mgr.domain_alloc("fs_dom", 1)


def test_unknown_domain_and_bad_size(mgr):
    with pytest.raises(errors.NoSuchDomain):
        mgr.domain_alloc("unknown_dom", 8)
    with pytest.raises(errors.BadSize):
        mgr.domain_alloc("fs_dom", 0)
    with pytest.raises(errors.PoolExhausted):
        mgr.domain_alloc("fs_dom", 16385)


def test_first_fit_reuse(mgr):
    h = mgr.domain_alloc("fs_dom", 4096)
    mgr.domain_free("fs_dom", h)
    again = mgr.domain_alloc("fs_dom", 4096)
    assert again.offset == h.offset
    assert mgr.domain("fs_dom").allocator.free_list == [[4096, 12288]]


def test_double_free_and_foreign_handle(mgr):
    h = mgr.domain_alloc("fs_dom", 64)
    mgr.domain_free("fs_dom", h)
    with pytest.raises(errors.DoubleFree):
        mgr.domain_free("fs_dom", h)
    other = mgr.domain_alloc("handle_dom", 64)
    with pytest.raises(errors.UnknownHandle):
        mgr.domain_free("fs_dom", other)


def test_zeroing_and_poisoning(mgr):
    key = mgr.domain("fs_dom").key_id
    h = mgr.domain_alloc("fs_dom", 100)
    mgr.set_access(key, AccessMode.READ_WRITE)
    mgr.write(h, 0, b"\x01" * 100)
    mgr.domain_free("fs_dom", h)
    raw, _ = mgr.backend.raw_buffer(mgr.domain("fs_dom").pool_base)
    assert bytes(raw[:112]) == bytes([POISON_BYTE]) * 112
    h2 = mgr.domain_alloc("fs_dom", 100)
    mgr.set_access(key, AccessMode.READ_ONLY)
    assert mgr.read(h2) == bytes(100)


def test_alloc_after_startup_needs_rw(mgr):
    key = mgr.domain("fs_dom").key_id
    mgr.close_startup()
    with pytest.raises(errors.IsolationFault):
        mgr.domain_alloc("fs_dom", 8)
    mgr.set_access(key, AccessMode.READ_ONLY)
    with pytest.raises(errors.IsolationFault):
        mgr.domain_alloc("fs_dom", 8)
    mgr.set_access(key, AccessMode.READ_WRITE)
    h = mgr.domain_alloc("fs_dom", 8)
    mgr.set_access(key, AccessMode.NONE)
    with pytest.raises(errors.IsolationFault):
        mgr.domain_free("fs_dom", h)


def test_set_access_semantics(mgr):
    key = mgr.domain("fs_dom").key_id
    h = mgr.domain_alloc("fs_dom", 32)
    with pytest.raises(errors.IsolationFault):
        mgr.read(h)
    mgr.set_access(key, AccessMode.READ_ONLY)
    assert mgr.read(h) == bytes(32)
    with pytest.raises(errors.IsolationFault):
        mgr.write(h, 0, b"x")
    mgr.set_access(key, AccessMode.NONE)
    with pytest.raises(errors.IsolationFault):
        mgr.read(h)
    with pytest.raises(errors.BadKey):
        mgr.set_access(0, AccessMode.NONE)
    with pytest.raises(errors.BadKey):
        mgr.set_access(15, AccessMode.READ_WRITE)


def test_mediated_access_stays_in_bounds(mgr):
    h = mgr.domain_alloc("fs_dom", 10)
    mgr.set_access(mgr.domain("fs_dom").key_id, AccessMode.READ_WRITE)
    with pytest.raises(IndexError):
        mgr.write(h, 8, b"abc")
    with pytest.raises(IndexError):
        mgr.read(h, -1, 2)


@pytest.mark.parametrize("backend", [b for b in available_backends() if b != "pageprot"])
def test_thread_locality(backend):
    m = DomainManager(TWO, backend)
    try:
        key = m.domain("fs_dom").key_id
        h = m.domain_alloc("fs_dom", 16)
        barrier = threading.Barrier(2)
        seen = {}

        def other():
            barrier.wait()          # A has elevated
            seen["mode"] = m.access(key)
            try:
                m.read(h)
                seen["read"] = True
            except errors.IsolationFault:
                seen["read"] = False
            barrier.wait()

        t = threading.Thread(target=other)
        t.start()
        m.set_access(key, AccessMode.READ_WRITE)
        barrier.wait()
        barrier.wait()
        t.join()
        assert m.read(h) == bytes(16)
        assert seen == {"mode": AccessMode.NONE, "read": False}
        m.set_access(key, AccessMode.NONE)
    finally:
        m.teardown()


def test_fresh_bookkeeping_baseline(mgr):
    # Descriptor plus one free-list record per domain.
    assert mgr.bookkeeping() == {"handle_dom": 40 + 11 + 16, "fs_dom": 40 + 7 + 16}


# -- allocator against the interval oracle ----------------------------------

ops = st.lists(st.tuples(st.booleans(), st.integers(1, 5000), st.integers(0, 10 ** 6)),
               max_size=200)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 4), ops)
def test_allocator_matches_oracle(pages, trace):
    cap = pages * 4096
    alloc = FirstFitAllocator(cap)
    oracle = IntervalOracle(cap)
    live = []
    for is_alloc, size, pick in trace:
        if is_alloc or not live:
            want = oracle.alloc(size)
            if want is None:
                with pytest.raises(errors.PoolExhausted):
                    alloc.alloc(size)
            else:
                assert alloc.alloc(size) == want
                live.append((want, size))
        else:
            off, _ = live.pop(pick % len(live))
            alloc.free(off)
            oracle.free(off)
        spans = [(o, o + s) for o, s in live]
        assert not overlaps(spans)
        assert alloc.live_bytes == oracle.live_bytes() <= cap
        free_total = sum(length for _, length in alloc.free_list)
        assert free_total + alloc.live_bytes == cap
