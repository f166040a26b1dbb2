"""Service endpoints: schemas, success paths, and error mapping."""

import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from coulomb_zpo import pipeline, recovery
from coulomb_zpo.service import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_healthz(client):
    body = client.get("/healthz").json()
    assert body["status"] == "ok"


def test_describe_density(client):
    r = client.post("/density/describe",
                    json={"density": {"kind": "power_tail", "p": 2.0},
                          "probes": [0.0, 1.0]})
    assert r.status_code == 200
    body = r.json()
    assert body["pdf"][0] == pytest.approx(1 / math.pi, rel=1e-12)
    assert body["cdf"][1] == pytest.approx(0.75, abs=1e-12)
    assert body["kinetic_energy"] == pytest.approx(1 / 16, rel=1e-3)
    assert body["tail_coefficient_3_50"] > 0.8


def test_describe_density_rejects_bad_exponent(client):
    r = client.post("/density/describe",
                    json={"density": {"kind": "power_tail", "p": 1.2}})
    assert r.status_code == 422


def test_ot_endpoint(client):
    r = client.post("/ot", json={"density": {"kind": "power_tail", "p": 2.0},
                                 "H": 4.0, "lattice_n": 40})
    assert r.status_code == 200
    body = r.json()
    assert body["F_OT"] == pytest.approx(1 / math.pi, abs=1e-6)
    assert abs(body["F_OT_dual_discrepancy"]) < 1e-8
    assert body["r_H"] == pytest.approx(0.25, abs=1e-9)
    header = body["lattice_csv"].splitlines()[0]
    assert header == "x,T,u,du,ddu,q"


def test_validate_params_endpoint(client):
    r = client.post("/validate-params", json={"eps": 1e-4, "H": 4.0})
    body = r.json()
    assert r.status_code == 200
    assert body["N"] == pytest.approx(16.045, abs=0.01)
    assert not body["all_hold"]
    names = {o["name"]: o for o in body["orderings"]}
    assert not names["beta_below_eps_2_5"]["holds"]
    assert "exp(-" in body["all_pass_eps_symbolic"]


def test_validate_params_rejects_eps_out_of_range(client):
    assert client.post("/validate-params", json={"eps": 0.5}).status_code == 422


def test_recover_endpoint_small(client):
    ov = recovery.multipliers_for(1e-3, pipeline.PRODUCTION_TUNING[1e-3])
    r = client.post("/recover", json={
        "density": {"kind": "power_tail", "p": 2.0, "box": 7.0},
        "H": 4.0, "eps": 1e-3, "grid_n": 256, "overrides": ov})
    assert r.status_code == 200
    body = r.json()
    assert abs(body["mass_identity_error"]) < 1e-9
    assert body["marginal_residual_x"] < 1e-6
    assert body["gap"] > 0
    assert body["marginal_margin_rho1"] > 0


def test_recover_endpoint_maps_errors(client):
    ov = recovery.multipliers_for(1e-3, pipeline.PRODUCTION_TUNING[1e-3])
    r = client.post("/recover", json={
        "density": {"kind": "power_tail", "p": 2.0, "box": 7.0},
        "H": 4.0, "eps": 1e-3, "grid_n": 32, "overrides": ov})
    assert r.status_code == 422
    assert "under-resolves" in r.json()["detail"]


def test_oracle_delta_endpoint(client):
    r = client.post("/oracle", json={"mode": "delta", "d2v_diag": [1.0, 0.0],
                                     "eps_sequence": [1e-4, 1e-5]})
    assert r.status_code == 200
    trace = r.json()["records"]["trace"]
    assert trace[-1]["energy"] == pytest.approx(0.5, rel=0.05)


def test_sweep_endpoint_and_failure_isolation(client):
    ov = recovery.multipliers_for(1e-3, pipeline.PRODUCTION_TUNING[1e-3])
    cfg = {"density": {"kind": "power_tail", "p": 2.0, "box": 7.0},
           "H_list": [4.0], "eps_list": [1e-3, 1e-1],  # second cell fails
           "grid_n": 256, "overrides": {"default": ov}}
    r = client.post("/sweep", json=cfg)
    assert r.status_code == 200
    body = r.json()
    assert not body["exit_ok"]
    ok_flags = [c["ok"] for c in body["cells"]]
    assert ok_flags == [True, False]
    assert body["cells"][1]["error"]
    assert body["csv"].splitlines()[0].startswith("H,eps,ok,error")
    assert "config_sha256" in body["manifest"]


def test_sweep_with_ground_oracle(client):
    ov = recovery.multipliers_for(1e-2, pipeline.PRODUCTION_TUNING[1e-2])
    cfg = {"density": {"kind": "power_tail", "p": 2.0, "box": 7.0},
           "H_list": [4.0], "eps_list": [1e-2], "grid_n": 256,
           "overrides": {"default": ov},
           "with_ground_oracle": True, "oracle_grid_n": 96}
    r = client.post("/sweep", json=cfg)
    assert r.status_code == 200
    cell = r.json()["cells"][0]
    assert cell["ok"] and cell["gap_oracle"] is not None


def test_tabulated_density_path(client, tmp_path):
    import numpy as np

    xs = np.linspace(-6, 6, 2001)
    pdf = np.exp(-np.abs(xs)) * (1 + 0.1 * xs**2)
    path = tmp_path / "density.csv"
    np.savetxt(path, np.column_stack([xs, pdf]), delimiter=",")
    r = client.post("/density/describe",
                    json={"density": {"kind": "tabulated", "path": str(path)},
                          "probes": [0.0], "ke_window": 5.0})
    assert r.status_code == 200
    assert r.json()["pdf"][0] > 0


def test_production_config_round_trip():
    cfg = pipeline.production_config()
    assert cfg.eps_list == [1e-2, 1e-3, 1e-4]
    # multipliers reproduce the absolute tuned values
    for eps, targets in pipeline.PRODUCTION_TUNING.items():
        sch = recovery.schedule(eps, 4.0, cfg.overrides[repr(eps)])
        assert sch.N == pytest.approx(targets["N"], rel=1e-12)
        assert sch.beta == pytest.approx(targets["beta"], rel=1e-12)
        assert sch.delta == pytest.approx(targets["delta"], rel=1e-12)
        assert sch.tau == pytest.approx(targets["tau"], rel=1e-12)
