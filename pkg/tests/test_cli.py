import json
import subprocess
import sys

import pytest

from gpagraph.cli import build_parser, main


def run(args, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GPAGRAPH_OUTPUT_DIR", str(tmp_path / "env_out"))
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_grow_ong(tmp_path, monkeypatch, capsys):
    code, out, _ = run(["grow", "--model", "ong", "--d", "2", "--n", "1000", "--seed", "7"], tmp_path,
                       monkeypatch, capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "id,x_0,x_1,degree,parent,nn_parent,mismatch"
    assert len(lines) == 1002   # header plus 1001 vertex rows
    assert all(l.endswith(",0") for l in lines[1:])


def test_grow_gpa_to_file(tmp_path, monkeypatch, capsys):
    path = tmp_path / "g.csv"
    code, _, _ = run(["grow", "--model", "gpa", "--f", "gamma:2", "--d", "2", "--n", "500", "--seed", "1",
                      "--out", str(path)], tmp_path, monkeypatch, capsys)
    assert code == 0
    rows = path.read_text().splitlines()[1:]
    mism = [int(r.split(",")[-1]) for r in rows]
    assert len(rows) == 501 and sum(mism) > 0


def test_missing_n_is_usage_error(tmp_path, monkeypatch, capsys):
    with pytest.raises(SystemExit) as e:
        run(["grow", "--model", "ong", "--d", "2"], tmp_path, monkeypatch, capsys)
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("args", [["grow", "--n", "10", "--f", "gamma:0.5", "--model", "gpa"],
                                  ["grow", "--n", "-3"], ["grow", "--n", "10", "--domain", "sphere"],
                                  ["fit", "--kind", "nope", "--input", "x"]])
def test_bad_flags_exit_2(args, tmp_path, monkeypatch, capsys):
    with pytest.raises(SystemExit) as e:
        run(args, tmp_path, monkeypatch, capsys)
    assert e.value.code == 2


def test_config_errors_are_machine_readable(tmp_path, monkeypatch, capsys):
    code, _, err = run(["grow", "--model", "gpa", "--n", "10"], tmp_path, monkeypatch, capsys)
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error_class"] == "config_error"


def test_rho_and_fit(tmp_path, monkeypatch, capsys):
    code, out, _ = run(["rho", "--d", "1", "--n", "5000", "--reps", "4", "--seed", "3"], tmp_path,
                       monkeypatch, capsys)
    assert code == 0 and "rho_hat" in out
    res = tmp_path / "env_out" / "rho_d1" / "result.json"
    assert res.exists()
    code, out, _ = run(["fit", "--kind", "mu", "--input", str(res)], tmp_path, monkeypatch, capsys)
    fit = json.loads(out)
    assert code == 0 and fit["kind"] == "exponential_rate"
    assert fit["k_min"] == 1 and fit["k_max"] >= 5 and 0.5 < fit["rate"] < 1.1
    code, out, _ = run(["fit", "--kind", "mu", "--input", str(res.parent), "--kmin", "2", "--kmax", "6"],
                       tmp_path, monkeypatch, capsys)
    assert json.loads(out)["k_min"] == 2
    code, _, err = run(["fit", "--kind", "stretched", "--input", str(res), "--min-count", "1e9"], tmp_path,
                       monkeypatch, capsys)
    assert code == 4 and "fit_error" in err


def test_run_with_config(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('n = 2000\nreplicates = 2\nbase_seed = 1\n[model]\nkind = "GPA"\n[model.F]\n'
                   'kind = "power_law"\nparam = 2.0\n[domain]\nkind = "torus"\ndimension = 1\n')
    code, out, _ = run(["run", "--config", str(cfg)], tmp_path, monkeypatch, capsys)
    assert code == 0 and "mismatch" in out
    assert (tmp_path / "env_out" / "run" / "result.json").exists()


def test_sweep_one_file_per_value(tmp_path, monkeypatch, capsys):
    out_dir = tmp_path / "sw"
    code, out, _ = run(["sweep", "--param", "s", "--values", "0.5,2,4", "--d", "1", "--n", "2000", "--reps", "2",
                        "--out", str(out_dir)], tmp_path, monkeypatch, capsys)
    assert code == 0
    for v in ("0.5", "2", "4"):
        assert (out_dir / f"s={v}" / "result.json").exists()


def test_table1_small(tmp_path, monkeypatch, capsys):
    # exercise the printing path on a tiny custom profile
    import gpagraph.experiments as ex
    real = ex.table1_config
    monkeypatch.setattr(ex, "table1_config",
                        lambda d, profile, base_seed, output: ex.dataclasses.replace(
                            real(d, profile, base_seed, output), n=3000, replicates=3))
    code, out, _ = run(["table1", "--d", "1", "--d", "2", "--profile", "desk"], tmp_path, monkeypatch, capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split()[:3] == ["d", "k=1", "k=2"]
    assert lines[1].split()[0] == "1" and len(lines[1].split()) == 11
    assert (tmp_path / "env_out" / "table1_desk_d2" / "result.json").exists()


def test_help_maps_flags_to_config(capsys):
    parser = build_parser()
    for cmd in ("grow", "rho", "run", "table1", "sweep", "fit", "selftest"):
        with pytest.raises(SystemExit):
            parser.parse_args([cmd, "--help"])
        text = capsys.readouterr().out
        assert "usage" in text
        if cmd in ("rho", "run", "sweep"):
            for key in ("model.kind", "domain.dimension", "replicates", "base_seed", "engine.backend"):
                assert key in text


def test_selftest_console_script():
    proc = subprocess.run([sys.executable, "-m", "gpagraph.cli", "selftest", "--quiet"], capture_output=True,
                          text=True, timeout=600)
    assert proc.returncode == 0, proc.stdout + proc.stderr
