import json
import subprocess
import sys
from importlib import resources

import pytest

from memdom.aclgen import lint_source, main
from memdom.minios.fs import compile_demo_policy, demo_acl, demo_acl_bytes, demo_policy_text
from memdom.policy import load_acl, parse_policy, serialize_acl

DEMO_POLICY = str(resources.files("memdom.minios").joinpath("demo.policy"))


def test_checked_in_acl_matches_policy():
    assert serialize_acl(compile_demo_policy()) == demo_acl_bytes()
    assert demo_acl() == compile_demo_policy()


def test_demo_snapshot():
    text = demo_acl_bytes().decode()
    assert "domain handle_dom pages=4\n" in text
    assert "domain fs_dom pages=4\n" in text
    assert "rule func=close ro=- rw=fd_table\n" in text
    assert "rule func=stat ro=mount_table,vnode_index rw=-\n" in text


def test_compile_is_deterministic(tmp_path):
    a, b = tmp_path / "a.acl", tmp_path / "b.acl"
    assert main(["compile", DEMO_POLICY, "-o", str(a)]) == 0
    assert main(["compile", DEMO_POLICY, "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes() == demo_acl_bytes()
    assert load_acl(a.read_bytes()) == parse_policy(demo_policy_text())


def test_compile_empty_policy(tmp_path):
    src = tmp_path / "empty.policy"
    src.write_text("")
    out = tmp_path / "empty.acl"
    assert main(["compile", str(src), "-o", str(out)]) == 0
    assert out.read_bytes() == b"ENCLAVEDOM-ACL v1\nend\n"


def test_compile_too_many_domains(tmp_path, capsys):
    src = tmp_path / "wide.policy"
    src.write_text("\n".join("> f%d > #d%d:" % (i, i) for i in range(16)))
    assert main(["compile", str(src), "-o", str(tmp_path / "x.acl")]) == 1
    err = capsys.readouterr().err
    assert "wide.policy:16: error: TooManyDomains" in err
    assert not (tmp_path / "x.acl").exists()


def test_pages_flag_only_affects_implicit_domains(tmp_path):
    src = tmp_path / "p.policy"
    src.write_text("domain a pages=2\n> f > #a:, #b:\n")
    out = tmp_path / "p.acl"
    assert main(["compile", str(src), "-o", str(out), "--pages", "7"]) == 0
    acl = load_acl(out.read_bytes())
    assert acl.domain("a").pool_pages == 2 and acl.domain("b").pool_pages == 7


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["compile", DEMO_POLICY, "-o", str(tmp_path / "x"), "--pages", "0"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_lint_demo_is_clean():
    assert lint_source(demo_policy_text()).findings == []


def codes(src):
    return [f.code for f in lint_source(src).findings]


def test_lint_capacity():
    assert codes("> f > a#d:16000, b#d:16000") == ["CapacityWarn"]
    assert codes("domain d pages=8\n> f > a#d:16000, b#d:16000") == []


def test_lint_unused_object():
    assert codes("object spare#d:8\n> f > #d:") == ["UnusedObject"]


def test_lint_shadowed_and_widened():
    assert codes("> f > #d:, x#d:") == ["ShadowedObject"]
    assert codes("x#d: > f > #d:") == ["ShadowedObject"]
    assert codes("#d: > f > x#d:") == ["BlanketRoObjectRw"]


def test_lint_parse_error_is_an_error():
    report = lint_source("x#d: > f")
    assert report.exit_status == 1
    assert report.findings[0].severity == "error"
    assert report.findings[0].line == 1


def test_lint_cli_json(tmp_path, capsys):
    src = tmp_path / "l.policy"
    src.write_text("object spare#d:8\n> f > #d:\n")
    assert main(["lint", str(src), "--json"]) == 0
    findings = json.loads(capsys.readouterr().out)
    assert findings == [{"severity": "warn", "code": "UnusedObject", "line": 1,
                         "message": "object 'spare' is never referenced by a rule"}]
    src.write_text("bad line\n")
    assert main(["lint", str(src)]) == 1


def test_console_entry_point(tmp_path):
    out = tmp_path / "demo.acl"
    proc = subprocess.run([sys.executable, "-m", "memdom.aclgen", "compile", DEMO_POLICY,
                           "-o", str(out)], capture_output=True)
    assert proc.returncode == 0
    assert out.read_bytes() == demo_acl_bytes()
