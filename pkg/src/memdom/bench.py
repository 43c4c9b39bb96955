"""Syscall microbenchmarks: time spent in the monitor and its memory overhead.

For every benchmarked syscall the harness times the whole call and,
separately, the monitor operations it performs (sandbox grant, revoke and
object size checks).  Setup and cleanup calls a syscall needs between
iterations (closing what ``open`` returned, say) run outside the timed
window.  Reference figures from the original prototype are attached to
the report for comparison only; different syscall bodies and hardware
make them non-reproducible in absolute terms.
"""

from __future__ import annotations

import argparse
import datetime
import json
import statistics
import sys
import time

from .backends import BACKEND_NAMES, resolve_backend_name
from .domains import DomainManager
from .errors import UnknownSyscall
from .minios.fs import O_CREAT, O_RDONLY, O_RDWR, O_TRUNC, O_WRONLY, MiniOS
from .monitor import Monitor
from .policy import parse_policy

REFERENCE_FRACTIONS = {"open": 0.064, "close": 0.491, "stat": 0.499,
                       "fstat": 0.501, "mmap": 0.008}
REFERENCE_MEMORY = {"handle_dom": 98, "fs_dom": 1030, "total": 1200}
DEFAULT_SYSCALLS = ("open", "close", "stat", "fstat", "mmap")

BENCH_DIR = "/bench"
BENCH_FILE = "/bench/file"
PAYLOAD = bytes(range(64))


def _workloads(os_, mmap_length):
    """name -> (setup, timed call, cleanup); setup's result feeds the other two."""
    keep = os_.open(BENCH_FILE, O_RDONLY)
    return {
        "open": (None, lambda _: os_.open(BENCH_FILE, O_RDWR), lambda _, fd: os_.close(fd)),
        "close": (lambda: os_.open(BENCH_FILE, O_RDONLY), os_.close, None),
        "stat": (None, lambda _: os_.stat(BENCH_FILE), None),
        "fstat": (None, lambda _: os_.fstat(keep), None),
        "mmap": (None, lambda _: os_.mmap_anon(mmap_length), lambda _, rid: os_.munmap(rid)),
        "munmap": (lambda: os_.mmap_anon(mmap_length), os_.munmap, None),
        "read": (lambda: os_.open(BENCH_FILE, O_RDONLY), lambda fd: os_.read(fd, len(PAYLOAD)),
                 lambda fd, _: os_.close(fd)),
        "write": (lambda: os_.open(BENCH_FILE, O_WRONLY | O_TRUNC),
                  lambda fd: os_.write(fd, PAYLOAD), lambda fd, _: os_.close(fd)),
        "unlink": (lambda: os_.close(os_.open("/bench/victim", O_CREAT | O_WRONLY)),
                   lambda _: os_.unlink("/bench/victim"), None),
    }


def _time_one(monitor, setup, call, cleanup, n):
    clock = time.perf_counter_ns
    total = mon = 0
    for _ in range(n):
        arg = setup() if setup else None
        m0 = monitor.monitor_ns
        t0 = clock()
        result = call(arg)
        t1 = clock()
        mon += monitor.monitor_ns - m0
        total += t1 - t0
        if cleanup:
            cleanup(arg, result)
    return total, mon


def run_syscall_bench(syscalls=DEFAULT_SYSCALLS, iterations=10000, backend="checked",
                      runs=5, mmap_length=1 << 20, os_=None):
    """Benchmark ``syscalls`` on a fresh minios and return a report dict.

    ``iterations`` timed calls per syscall are split evenly over ``runs``
    runs; per-run fractions give the reported median and mean.
    """
    syscalls = list(syscalls)
    own = os_ is None
    if own:
        os_ = MiniOS(backend=backend)
    try:
        os_.mkdir(BENCH_DIR)
        os_.close(os_.open(BENCH_FILE, O_CREAT | O_WRONLY))
        loads = _workloads(os_, mmap_length)
        for name in syscalls:
            if name not in loads:
                raise UnknownSyscall("cannot benchmark syscall %r" % (name,))
        monitor = os_.monitor
        monitor.profiling = True
        per_run = [iterations // runs + (1 if r < iterations % runs else 0) for r in range(runs)]
        rows = []
        for name in syscalls:
            setup, call, cleanup = loads[name]
            totals, mons, fracs = [], [], []
            for n in per_run:
                if n == 0:
                    continue
                total, mon = _time_one(monitor, setup, call, cleanup, n)
                totals.append(total)
                mons.append(mon)
                fracs.append(mon / total if total else 0.0)
            total_ns, monitor_ns = sum(totals), sum(mons)
            rows.append({
                "name": name,
                "iterations": iterations,
                "runs": len(totals),
                "total_ns": total_ns,
                "monitor_ns": monitor_ns,
                "fraction": monitor_ns / total_ns if total_ns else 0.0,
                "fraction_median": statistics.median(fracs) if fracs else 0.0,
                "fraction_mean": statistics.fmean(fracs) if fracs else 0.0,
                "mean_ns": total_ns / iterations if iterations else 0.0,
                "reference_fraction": REFERENCE_FRACTIONS.get(name),
            })
        monitor.profiling = False
        memory = measure_memory_overhead(monitor)
        report = {
            "backend": os_.manager.backend.name,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "iterations": iterations,
            "runs": runs,
            "syscalls": rows,
            "domains": memory["domains"],
            "totals": {
                "total_ns": sum(r["total_ns"] for r in rows),
                "monitor_ns": sum(r["monitor_ns"] for r in rows),
                "bookkeeping_bytes": memory["total"],
                "shared_bookkeeping_bytes": memory["shared"],
                "reference_bytes": REFERENCE_MEMORY["total"],
            },
        }
        tot = report["totals"]
        tot["fraction"] = tot["monitor_ns"] / tot["total_ns"] if tot["total_ns"] else 0.0
        return report
    finally:
        if own:
            os_.shutdown()


def measure_memory_overhead(monitor: Monitor):
    """Peak bookkeeping bytes per domain, shared, and in total."""
    overhead = monitor.memory_overhead()
    domains = []
    for label, nbytes in overhead["domains"].items():
        dom = monitor.manager.domains[label]
        domains.append({
            "label": label,
            "bookkeeping_bytes": nbytes,
            "pool_high_water_bytes": dom.high_water,
            "reference_bytes": REFERENCE_MEMORY.get(label),
        })
    return {"domains": domains, "shared": overhead["shared"], "total": overhead["total"]}


def scaling_policy(n_rules):
    """Demo domains and objects with ``n_rules`` generated function rules."""
    lines = ["fd_table#handle_dom:1024, mount_table#fs_dom:1024 > fn_%03d > vnode_index#fs_dom:12288"
             % i for i in range(n_rules)]
    return parse_policy("\n".join(lines))


def bookkeeping_scaling(rule_counts=(8, 16, 32), backend="checked"):
    """Total bookkeeping for generated policies; returns points, slope and R²."""
    points = []
    for n in rule_counts:
        acl = scaling_policy(n)
        manager = DomainManager(acl, backend)
        try:
            monitor = Monitor(manager, acl)
            for obj in acl.objects:
                monitor.alloc_object(obj.object_label)
            points.append((n, monitor.memory_overhead()["total"]))
        finally:
            manager.teardown()
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    slope, intercept = statistics.linear_regression(xs, ys)
    r = statistics.correlation(xs, ys)
    return {"points": points, "slope": slope, "intercept": intercept, "r_squared": r * r}


def format_table(report):
    out = ["%-8s %12s %12s %10s %10s" % ("syscall", "mean ns", "% monitor",
                                          "reference", "median %")]
    for row in report["syscalls"]:
        ref = row["reference_fraction"]
        out.append("%-8s %12.0f %11.1f%% %10s %9.1f%%" % (
            row["name"], row["mean_ns"], 100 * row["fraction"],
            "-" if ref is None else "%.1f%%" % (100 * ref), 100 * row["fraction_median"]))
    out.append("")
    out.append("%-12s %14s %14s %10s" % ("domain", "bookkeeping B", "high water B", "reference"))
    for dom in report["domains"]:
        ref = dom["reference_bytes"]
        out.append("%-12s %14d %14d %10s" % (dom["label"], dom["bookkeeping_bytes"],
                                             dom["pool_high_water_bytes"],
                                             "-" if ref is None else ref))
    tot = report["totals"]
    out.append("%-12s %14d %14s %10d" % ("Total", tot["bookkeeping_bytes"], "",
                                         tot["reference_bytes"]))
    return "\n".join(out)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="edbench", description="minios syscall microbenchmarks")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run")
    r.add_argument("--backend", choices=BACKEND_NAMES, default="checked")
    r.add_argument("--iters", type=int, default=10000)
    r.add_argument("--runs", type=int, default=5)
    r.add_argument("--syscalls", default=",".join(DEFAULT_SYSCALLS),
                   help="comma-separated list (empty for none)")
    r.add_argument("--out", help="write the JSON report here")
    r.add_argument("--table", action="store_true", help="print an aligned text table")
    args = parser.parse_args(argv)
    if args.iters < 0 or args.runs < 1:
        parser.error("--iters must be >= 0 and --runs >= 1")
    syscalls = [s for s in args.syscalls.split(",") if s]
    try:
        report = run_syscall_bench(syscalls, args.iters, resolve_backend_name(args.backend),
                                   args.runs)
    except UnknownSyscall as exc:
        print("edbench: %s" % exc, file=sys.stderr)
        return 1
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=2)
    if args.table:
        print(format_table(report))
    elif not args.out:
        print(json.dumps(report, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
