import json

import pytest

from memdom import bench
from memdom.domains import DomainManager
from memdom.errors import UnknownSyscall
from memdom.minios import demo_acl
from memdom.monitor import Monitor


@pytest.fixture(scope="module")
def report():
    return bench.run_syscall_bench(iterations=1000, runs=5)


def test_report_rows(report):
    rows = report["syscalls"]
    assert [r["name"] for r in rows] == ["open", "close", "stat", "fstat", "mmap"]
    for r in rows:
        assert r["iterations"] == 1000 and r["runs"] == 5
        assert 0 < r["monitor_ns"] <= r["total_ns"]
        assert 0 <= r["fraction"] <= 1
        assert r["fraction"] == pytest.approx(r["monitor_ns"] / r["total_ns"])
    refs = {r["name"]: r["reference_fraction"] for r in rows}
    assert refs == {"open": 0.064, "close": 0.491, "stat": 0.499, "fstat": 0.501, "mmap": 0.008}


def test_totals_are_sums(report):
    tot = report["totals"]
    assert tot["total_ns"] == sum(r["total_ns"] for r in report["syscalls"])
    assert tot["monitor_ns"] == sum(r["monitor_ns"] for r in report["syscalls"])
    assert tot["bookkeeping_bytes"] == (sum(d["bookkeeping_bytes"] for d in report["domains"])
                                        + tot["shared_bookkeeping_bytes"])
    assert report["backend"] == "checked" and report["timestamp"]


def test_structure_is_deterministic(report):
    again = bench.run_syscall_bench(iterations=200, runs=2)
    assert [r["name"] for r in again["syscalls"]] == [r["name"] for r in report["syscalls"]]
    assert again["domains"] == report["domains"]


def test_empty_syscall_list():
    rep = bench.run_syscall_bench([], iterations=1000)
    assert rep["syscalls"] == [] and rep["totals"]["total_ns"] == 0


def test_other_syscalls_and_unknown():
    rep = bench.run_syscall_bench(["read", "write", "unlink", "munmap"], iterations=50)
    assert all(r["monitor_ns"] > 0 for r in rep["syscalls"])
    with pytest.raises(UnknownSyscall):
        bench.run_syscall_bench(["fork"], iterations=10)


def test_fresh_memory_baseline():
    acl = demo_acl()
    mon = Monitor(DomainManager(acl), acl)
    try:
        mem = bench.measure_memory_overhead(mon)
        base = {d["label"]: d for d in mem["domains"]}
        # Nothing allocated: pools untouched, one free-list record each.
        assert base["handle_dom"]["pool_high_water_bytes"] == 0
        assert mon.manager.bookkeeping() == {"fs_dom": 40 + 7 + 16, "handle_dom": 40 + 11 + 16}
    finally:
        mon.manager.teardown()


def test_scaling_is_linear():
    fit = bench.bookkeeping_scaling()
    assert [p[0] for p in fit["points"]] == [8, 16, 32]
    assert fit["slope"] > 0 and fit["r_squared"] > 0.9


def test_cli(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert bench.main(["run", "--iters", "100", "--runs", "2", "--out", str(out), "--table"]) == 0
    text = capsys.readouterr().out
    assert "Total" in text and "handle_dom" in text
    assert len(json.loads(out.read_text())["syscalls"]) == 5
    assert bench.main(["run", "--iters", "10", "--syscalls", "fork"]) == 1
