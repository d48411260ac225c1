import csv
import io
import json
import subprocess
import sys

import pytest

from shortpkt.cli import load_config_file, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def test_pdv_single_threshold(capsys):
    code, out, _ = run(capsys, "pdv", "--snr-db", "5", "--n", "100", "--lambda", "1e-3", "--d0", "500")
    assert code == 0
    assert out.splitlines()[0] == "# schema_version=1"
    (row,) = rows_of(out)
    assert row["d_frames"] == "5"
    assert float(row["pdv_exact"]) == pytest.approx(1.2077758673558385e-2, rel=1e-8)
    assert float(row["pdv_netcalc"]) >= float(row["pdv_exact"])


def test_threshold_below_one_frame_is_certain(capsys):
    code, out, _ = run(capsys, "pdv", "--snr-db", "5", "--n", "100", "--lambda", "1e-3", "--d0", "50")
    (row,) = rows_of(out)
    assert code == 0 and row["d_frames"] == "1"
    assert float(row["pdv_exact"]) == 1.0
    assert float(row["pdv_netcalc"]) == 1.0


def test_async_marks_frame_columns_na(capsys):
    code, out, _ = run(capsys, "pdv", "--epsilon", "0.1", "--n", "50", "--lambda", "1e-3",
                       "--d0", "200", "400", "--regime", "async")
    rows = rows_of(out)
    assert code == 0 and len(rows) == 2
    assert all(r["d_frames"] == "NA" and r["pdv_netcalc"] == "NA" for r in rows)
    assert float(rows[1]["pdv_exact"]) < float(rows[0]["pdv_exact"])


def test_age_command(capsys):
    code, out, _ = run(capsys, "age", "--snr-db", "5", "--n", "100", "--lambda", "1e-3", "--a0", "800", "1500")
    rows = rows_of(out)
    assert code == 0
    assert list(rows[0]) == ["a0_cu", "a_frames", "paov_exact", "paov_saddlepoint"]
    assert float(rows[1]["paov_exact"]) < float(rows[0]["paov_exact"])


def test_json_output(capsys):
    code, out, _ = run(capsys, "pdv", "--snr-db", "5", "--n", "100", "--lambda", "1e-3",
                       "--d0", "500", "--format", "json")
    doc = json.loads(out)
    assert code == 0
    assert doc["schema_version"] == 1 and doc["command"] == "pdv"
    assert doc["rows"][0]["d_frames"] == 5
    assert doc["meta"]["epsilon"] == pytest.approx(0.265937, rel=1e-5)


def test_unstable_parameters_exit_nonzero(capsys):
    code, out, err = run(capsys, "pdv", "--snr-db", "5", "--n", "100", "--lambda", "1e-2", "--d0", "500")
    assert code == 1 and out == ""
    assert "unstable" in err


def test_missing_parameter(capsys):
    code, _, err = run(capsys, "pdv", "--snr-db", "5", "--n", "100", "--d0", "500")
    assert code == 1 and "lambda" in err


def test_sweep_rows(capsys):
    code, out, _ = run(capsys, "sweep", "--snr-db", "5", "--lambda", "1e-3", "--d0", "500",
                       "--n-min", "95", "--n-max", "105")
    rows = rows_of(out)
    assert code == 0 and len(rows) == 11
    assert [int(r["n"]) for r in rows] == list(range(95, 106))
    argmin = min(rows, key=lambda r: float(r["pdv"]))["n"]
    assert f"# argmin_n={argmin}" in out


def test_throughput_rows(capsys):
    code, out, _ = run(capsys, "throughput", "--snr-db", "10", "--d0", "500", "--target", "1e-3",
                       "--n-min", "66", "--n-max", "68")
    rows = rows_of(out)
    assert code == 0 and len(rows) == 3
    for r in rows:
        assert float(r["throughput_netcalc"]) <= float(r["throughput_exact"])
        assert float(r["throughput_exact"]) == pytest.approx(100 * float(r["lambda_star_exact"]), rel=1e-8)


def test_throughput_rejects_fixed_epsilon_over_range(capsys):
    code, _, err = run(capsys, "throughput", "--epsilon", "0.1", "--d0", "500", "--target", "1e-3",
                       "--n-min", "66", "--n-max", "68")
    assert code == 1 and "epsilon" in err


def _cli(*argv):
    return subprocess.run([sys.executable, "-m", "shortpkt", *argv], capture_output=True, check=True).stdout


def test_simulate_is_byte_identical():
    argv = ("simulate", "--epsilon", "0.2", "--n", "50", "--lambda", "2e-3",
            "--horizon", "2000000", "--seed", "11", "--replicas", "2")
    first = _cli(*argv)
    assert first == _cli(*argv)
    assert b"metric,threshold,ccdf,stderr" in first


def test_compare_includes_simulation(capsys):
    code, out, _ = run(capsys, "compare", "--epsilon", "0.05", "--n", "100", "--lambda", "1e-3",
                       "--d0", "200", "300", "--horizon", "20000000", "--seed", "1")
    rows = rows_of(out)
    assert code == 0 and len(rows) == 2
    for r in rows:
        assert abs(float(r["pdv_simulated"]) - float(r["pdv_exact"])) < 5 * float(r["pdv_simulated_stderr"]) + 1e-9


def test_config_file_and_override(tmp_path, capsys):
    path = tmp_path / "run.cfg"
    path.write_text('# example\nsnr_db = 5\nn = 100\nlambda = "1e-3"\nd0 = 500, 600  # thresholds\n')
    assert load_config_file(path)["lambda"] == "1e-3"
    code, out, _ = run(capsys, "pdv", "--config", str(path))
    assert code == 0 and len(rows_of(out)) == 2
    code, out, _ = run(capsys, "pdv", "--config", str(path), "--n", "140", "--d0", "500")
    (row,) = rows_of(out)
    assert float(row["pdv_exact"]) == pytest.approx(2.0119e-4, rel=1e-4)


def test_config_file_unknown_key(tmp_path, capsys):
    path = tmp_path / "run.cfg"
    path.write_text("snr_db = 5\nbogus = 1\n")
    code, _, err = run(capsys, "pdv", "--config", str(path))
    assert code == 1 and "bogus" in err


def test_output_file(tmp_path, capsys):
    out_path = tmp_path / "pdv.csv"
    code, out, _ = run(capsys, "pdv", "--snr-db", "5", "--n", "100", "--lambda", "1e-3",
                       "--d0", "500", "--out", str(out_path))
    assert code == 0 and out == ""
    assert out_path.read_text().startswith("# schema_version=1")
