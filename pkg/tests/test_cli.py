import csv
import io
import json

import numpy as np
import pytest

from frozentrace import write_matrix_market
from frozentrace.cli import ConfigError, main, parse_config, parse_op_spec, read_config_file


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_bench_flat(capsys):
    code, out, _ = run(capsys, "--command", "bench", "--op", "flat:dim=16", "--m", "12",
                       "--estimators", "exact,hutchinson,hutchpp")
    assert code == 0
    rows = rows_of(out)
    assert [r["estimator"] for r in rows] == ["exact", "hutchinson", "hutchpp"]
    assert float(rows[0]["value"]) == 16.0
    assert rows[2]["matvecs"] == str(4 + 4 + 4)
    assert rows[0]["schema_version"] == "1"


def test_bench_small_m_is_contract_error(capsys):
    code, _, err = run(capsys, "--command", "bench", "--op", "flat:dim=16", "--m", "3", "--estimators", "hutchpp")
    assert code == 3
    assert "m >= 6" in err


def test_bench_mtx_file(capsys, tmp_path):
    p = tmp_path / "d.mtx"
    write_matrix_market(p, np.diag([1.0, 2.0, 3.0]))
    code, out, _ = run(capsys, "--command", "bench", "--mtx", str(p), "--estimators", "exact")
    assert code == 0
    assert float(rows_of(out)[0]["value"]) == 6.0


def test_bench_bad_mtx_is_contract_error(capsys, tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 q 1\n")
    code, _, err = run(capsys, "--command", "bench", "--mtx", str(p))
    assert code == 3 and "line 3" in err


def test_csv_format_details(capsys):
    code, out, _ = run(capsys, "--command", "bench", "--op", "power_law:dim=8,p=1", "--m", "6",
                       "--estimators", "hutchinson")
    assert code == 0
    lines = out.split("\r\n")
    assert lines[0].startswith("schema_version,estimator,m,")
    value = rows_of(out)[0]["value"]
    assert float(value) == float(format(float(value), ".17g"))
    assert len(value.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) >= 15


def test_json_has_same_keys_as_csv(capsys):
    args = ["--command", "bench", "--op", "flat:dim=4", "--m", "6"]
    _, out_csv, _ = run(capsys, *args)
    _, out_json, _ = run(capsys, *args, "--format", "json")
    data = json.loads(out_json)
    assert [list(d) for d in data] == [list(r) for r in rows_of(out_csv)]


def test_verify_defaults_pass(capsys):
    code, out, err = run(capsys, "--command", "verify")
    assert code == 0
    rows = rows_of(out)
    assert rows and all(r["passed"] == "true" for r in rows)
    names = {r["check"] for r in rows}
    assert {"hutchinson-variance", "hutchpp-variance", "deflated-variance", "log-density-variance",
            "low-rank-tail", "range-finder"} <= names
    assert "0 failed" in err


def test_verify_tiny_slack_fails(capsys, tmp_path):
    out_path = tmp_path / "checks.csv"
    code, _, err = run(capsys, "--command", "verify", "--slack", "0.01", "--trials", "500", "--out", str(out_path))
    assert code == 1
    rows = rows_of(out_path.read_text())
    variance = [r for r in rows if r["check"].endswith("-variance")]
    assert variance and all(r["passed"] == "false" for r in variance)
    assert "failed" in err


@pytest.mark.parametrize("op", ["low_rank:dim=8,head=1;-1,psd=false", "low_rank:dim=8,head=1;-1"])
def test_verify_negative_eigenvalue_is_contract_error(capsys, op):
    code, _, err = run(capsys, "--command", "verify", "--op", op, "--trials", "100")
    assert code == 3
    assert "PSD" in err or "negative" in err


def test_cost_grid_and_clamp(capsys):
    code, out, err = run(capsys, "--command", "cost", "--op", "power_law:dim=16,p=1", "--m", "12",
                         "--Ls", "1,10,25,50,200", "--repeats", "1")
    assert code == 0
    rows = rows_of(out)
    assert [int(r["qr_count"]) for r in rows] == [100, 10, 4, 2, 1]
    assert rows[-1]["clamped"] == "true" and rows[-1]["Ls"] == "100" and rows[-1]["requested_Ls"] == "200"
    assert "clamped" in err


def test_trajectory_command(capsys):
    code, out, _ = run(capsys, "--command", "trajectory", "--op", "power_law:dim=16,p=1", "--m", "12",
                       "--Ls", "1,10", "--trials", "200", "--beta", "2.0")
    assert code == 0
    rows = rows_of(out)
    assert [int(r["qr_count"]) for r in rows] == [100, 10]
    assert rows[0]["exact_integral"] == ""


def test_trajectory_bad_beta_length(capsys):
    code, _, err = run(capsys, "--command", "trajectory", "--op", "flat:dim=4", "--beta", "1,2,3")
    assert code == 2 and "beta" in err


def test_sweep_command(capsys):
    code, out, _ = run(capsys, "--command", "sweep", "--op", "power_law:dim=32,p=1", "--estimators", "hutchpp",
                       "--trials", "50", "--eps", "0.2,0.1")
    assert code == 0
    rows = rows_of(out)
    assert [float(r["epsilon"]) for r in rows] == [0.2, 0.1]
    assert int(rows[0]["m_required"]) <= int(rows[1]["m_required"])


def test_output_is_byte_stable_except_wall_time(capsys, tmp_path):
    def table(name):
        p = tmp_path / name
        assert main(["--command", "bench", "--op", "power_law:dim=32,p=2", "--m", "6,12", "--out", str(p)]) == 0
        return [{k: v for k, v in r.items() if k != "wall_time"} for r in rows_of(p.read_text())]

    assert table("a.csv") == table("b.csv")


def test_config_file_and_flag_override(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# bench settings\ncommand = bench\nop = flat:dim=5  # comment\nm = 6\nestimators = exact\n")
    code, out, _ = run(capsys, "--config", str(cfg))
    assert code == 0 and float(rows_of(out)[0]["value"]) == 5.0
    code, out, _ = run(capsys, "--config", str(cfg), "--op", "flat:dim=7")
    assert float(rows_of(out)[0]["value"]) == 7.0
    values = read_config_file(cfg)
    assert parse_config(values) == parse_config(values)


@pytest.mark.parametrize(
    "argv",
    [
        ["--command", "bench", "--op", "bogus:dim=3"],
        ["--command", "bench", "--op", "flat:dim=x"],
        ["--command", "bench", "--op", "flat:dim=3,color=red"],
        ["--command", "nope"],
        ["--op", "flat:dim=3"],
        ["--command", "bench", "--m", "six"],
        ["--command", "bench", "--estimators", "magic"],
    ],
)
def test_parse_errors_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("command = bench\nnot a pair\n")
    with pytest.raises(ConfigError, match="2"):
        read_config_file(bad)
    bad.write_text("colour = blue\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)


def test_parse_op_spec_kinds():
    assert parse_op_spec("identity:dim=3").eigenvalues().tolist() == [1.0, 1.0, 1.0]
    assert parse_op_spec("diag:values=1;2;3").tolist() == [1.0, 2.0, 3.0]
    spec = parse_op_spec("power_law:dim=4,p=2,stretch=4")
    assert spec.kind == "stretched" and spec.eigenvalues()[0] == 4.0
    assert parse_op_spec("low_rank:dim=5,head=3;2,tail=0.5,seed=9").rotation_seed == 9
    with pytest.raises(ConfigError):
        parse_op_spec("flat:dim")


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
