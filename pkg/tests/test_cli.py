"""CLI thin client: subcommands, outputs, exit codes, determinism."""

import json
import math

import pytest

from coulomb_zpo import pipeline, recovery
from coulomb_zpo.cli import main


def run_cli(args):
    try:
        return main(args)
    except SystemExit as exc:
        return exc.code


def test_describe_density_stdout(capsys):
    code = run_cli(["describe-density", "--p", "2.0", "--probes", "0.0"])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert body["pdf"][0] == pytest.approx(1 / math.pi, rel=1e-12)


def test_validate_params_stdout(capsys):
    code = run_cli(["validate-params", "--eps", "1e-4"])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert body["all_hold"] is False


def test_override_parsing_error():
    code = run_cli(["validate-params", "--eps", "1e-4", "--override", "beta"])
    assert code not in (0, None)


def test_recover_and_outputs(tmp_path, capsys):
    ov = recovery.multipliers_for(1e-3, pipeline.PRODUCTION_TUNING[1e-3])
    args = ["--out", str(tmp_path), "recover", "--eps", "1e-3", "--box", "7.0",
            "--grid-n", "256"]
    for k, v in ov.items():
        args += ["--override", f"{k}={v!r}"]
    code = run_cli(args)
    capsys.readouterr()
    assert code == 0
    body = json.loads((tmp_path / "recover.json").read_text())
    assert body["gap"] > 0
    assert abs(body["mass_identity_error"]) < 1e-9


def test_ot_writes_lattice_csv(tmp_path, capsys):
    code = run_cli(["--out", str(tmp_path), "ot", "--p", "2.0", "--box", "7.0",
                    "--lattice-n", "24"])
    capsys.readouterr()
    assert code == 0
    lines = (tmp_path / "ot_lattice.csv").read_text().splitlines()
    assert lines[0] == "x,T,u,du,ddu,q"
    assert len(lines) > 10


def test_sweep_exit_codes_and_determinism(tmp_path, capsys):
    ov = recovery.multipliers_for(1e-3, pipeline.PRODUCTION_TUNING[1e-3])
    cfg = {"density": {"kind": "power_tail", "p": 2.0, "box": 7.0},
           "H_list": [4.0], "eps_list": [1e-3], "grid_n": 256,
           "overrides": {"default": ov}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run_cli(["--out", str(out_a), "sweep", "--config", str(cfg_path)]) == 0
    assert run_cli(["--out", str(out_b), "sweep", "--config", str(cfg_path)]) == 0
    capsys.readouterr()
    assert (out_a / "sweep.csv").read_bytes() == (out_b / "sweep.csv").read_bytes()

    cfg["eps_list"] = [1e-3, 1e-1]  # second cell fails structurally
    cfg_path.write_text(json.dumps(cfg))
    code = run_cli(["--out", str(out_a), "sweep", "--config", str(cfg_path)])
    capsys.readouterr()
    assert code == 2
    rows = (out_a / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3  # header + both cells, failure recorded not dropped


def test_recover_dump_remainder(tmp_path, capsys):
    ov = recovery.multipliers_for(1e-3, pipeline.PRODUCTION_TUNING[1e-3])
    args = ["--out", str(tmp_path), "recover", "--eps", "1e-3", "--box", "7.0",
            "--grid-n", "256", "--dump-remainder"]
    for k, v in ov.items():
        args += ["--override", f"{k}={v!r}"]
    code = run_cli(args)
    capsys.readouterr()
    assert code == 0
    for name in ("sigma1.csv", "sigma2.csv", "pi0.csv", "pi_tilde.csv"):
        assert (tmp_path / name).exists()
    from coulomb_zpo.gridfield import GridField1D

    sigma1 = GridField1D.from_csv((tmp_path / "sigma1.csv").read_text())
    assert sigma1.mass() > 0


def test_oracle_delta_cli(capsys):
    code = run_cli(["oracle", "--mode", "delta", "--d2v-diag", "1.0", "0.0",
                    "--eps-sequence", "1e-4"])
    assert code == 0
    body = json.loads(capsys.readouterr().out)
    assert body["records"]["trace"][0]["target"] == 0.5
