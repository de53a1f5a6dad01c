import json
import re

import pytest

from hftlab.cli import main
from hftlab.suite import CHECK_NAMES

CHECK_BASES = set(CHECK_NAMES)


def run(capsys, *argv):
    status = main(list(argv))
    out = capsys.readouterr()
    return status, out.out, out.err


def _base(name):
    name = name.split("[")[0]
    for suffix in ("_oracle", "_condition"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


def test_verify_crossing_json(capsys):
    status, out, _ = run(capsys, "verify", "--builtin", "crossing", "--grid", "-1:1:21", "--beta", "1", "--json")
    assert status == 0
    report = json.loads(out)
    assert set(report) == {"model", "grid", "degeneracy_points", "checks", "timestamp"}
    assert report["degeneracy_points"] == [{"lambda0": 0.0, "g": 2}] or abs(report["degeneracy_points"][0]["lambda0"]) <= 1e-10
    assert all(c["verdict"] == "pass" for c in report["checks"])
    assert {_base(c["name"]) for c in report["checks"]} <= CHECK_BASES
    for c in report["checks"]:
        assert set(c) == {"name", "lambda", "residual", "tolerance", "verdict", "notes"}


@pytest.mark.parametrize("name", ["avoided", "spin1", "persistent", "rotating"])
def test_verify_other_builtins_pass(capsys, name):
    status, out, _ = run(capsys, "verify", "--builtin", name, "--grid", "-1:1:9", "--beta", "0.1", "1", "10")
    assert status == 0, out
    assert re.search(r"\d+ checks, 0 failed", out)


def test_scan_found_point_is_inserted_into_grid(capsys):
    # 20 points on [-1, 1] miss lambda = 0
    status, out, _ = run(capsys, "verify", "--builtin", "crossing", "--grid", "-1:1:20", "--json")
    report = json.loads(out)
    assert status == 0
    assert any(abs(x) <= 1e-10 for x in report["grid"])
    assert any(c["name"].startswith("diagonal_hft") and abs(c["lambda"]) <= 1e-10 for c in report["checks"])


def test_json_is_stable_apart_from_timestamp(capsys):
    argv = ("verify", "--builtin", "avoided", "--grid", "-1:1:5", "--json")
    _, first, _ = run(capsys, *argv)
    _, second, _ = run(capsys, *argv)
    a, b = json.loads(first), json.loads(second)
    a.pop("timestamp"), b.pop("timestamp")
    assert json.dumps(a) == json.dumps(b)
    strip = lambda s: re.sub(r'"timestamp": "[^"]*"', "", s)
    assert strip(first) == strip(second)


def test_checks_filter(capsys):
    _, out, _ = run(capsys, "verify", "--builtin", "spin1", "--lambda", "0", "--checks", "sum_rule,free_energy", "--json")
    names = {_base(c["name"]) for c in json.loads(out)["checks"]}
    assert names == {"sum_rule", "free_energy"}


def test_unknown_check_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["verify", "--builtin", "crossing", "--checks", "nope"])
    assert info.value.code == 2


def test_bad_model_file_exits_2_with_position(tmp_path, capsys):
    bad = tmp_path / "bad.hm"
    bad.write_text("matrix H {\n  dim = 2;\n  [2,1] = lambda;\n}\n")
    status, _, err = run(capsys, "verify", "--model", str(bad))
    assert status == 2
    assert "line 3, column 3" in err


def test_missing_model_file_exits_2(tmp_path, capsys):
    status, _, err = run(capsys, "verify", "--model", str(tmp_path / "absent.hm"))
    assert status == 2 and "error" in err


def test_model_file_with_observable(tmp_path, capsys):
    path = tmp_path / "obs.hm"
    path.write_text(
        "matrix H { dim = 2; [1,1] = lambda; [2,2] = -lambda; }\n"
        "matrix A { dim = 2; [1,1] = lambda^2 + lambda; [2,2] = lambda^2 + lambda; }\n"
        "matrix W { dim = 2; [1,1] = 2; [2,2] = 1; }\n"
    )
    status, out, _ = run(capsys, "verify", "--model", str(path), "--grid", "-1:1:5", "--json")
    assert status == 0
    names = {c["name"] for c in json.loads(out)["checks"]}
    assert "observable_trace_condition" in {_n.split("[")[0] for _n in names}


def test_failing_condition_gives_exit_1(tmp_path, capsys):
    path = tmp_path / "bad_a.hm"
    path.write_text(
        "matrix H { dim = 2; [1,1] = lambda; [2,2] = -lambda; }\n"
        "matrix A { dim = 2; [1,2] = lambda; }\n"
    )
    status, out, _ = run(capsys, "verify", "--model", str(path), "--lambda", "0", "--checks", "observable_trace")
    assert status == 1
    assert "condition violated" in out


def test_scan_spin1(capsys):
    status, out, _ = run(capsys, "scan", "--builtin", "spin1", "--grid", "-1:1:41")
    assert status == 0
    m = re.search(r"lambda0 = (\S+)\s+g = (\d+)", out)
    assert abs(float(m.group(1))) <= 1e-10 and m.group(2) == "3"


def test_scan_avoided_text(capsys):
    status, out, _ = run(capsys, "scan", "--builtin", "avoided")
    assert status == 0 and "no degeneracy points found" in out


def test_scan_json(capsys):
    _, out, _ = run(capsys, "scan", "--builtin", "crossing", "--grid", "-1:1:41", "--json")
    report = json.loads(out)
    assert report["checks"] == [] and report["degeneracy_points"][0]["g"] == 2


def test_invalid_grid_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["verify", "--builtin", "crossing", "--grid", "1:-1:5"])
    assert info.value.code == 2
