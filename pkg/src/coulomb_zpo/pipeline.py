"""Run orchestration shared by the service endpoints and the CLI client:
density resolution, per-cell recovery runs, sweep assembly, CSV rendering,
and the reproducibility manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time

import numpy as np
import scipy

from . import __version__, coulomb_ot, marginal_fix, oracle, recovery
from .density import Density1D, make_power_tail, make_tabulated
from .service.schemas import (
    DensitySpec,
    RecoverRequest,
    RecoverResponse,
    RunConfig,
    SweepCell,
    SweepResponse,
)

_SOLUTION_CACHE: dict = {}

# production sweep (boxed reference density on [-7, 7], H = 4, 512^2):
# absolute tuned schedule values per eps, converted to multipliers below
PRODUCTION_BOX = 7.0
PRODUCTION_TUNING = {
    1e-2: {"N": 5.0, "beta": 0.12, "delta": 0.06, "tau": 0.010},
    1e-3: {"N": 5.0, "beta": 0.07, "delta": 0.045, "tau": 0.010},
    1e-4: {"N": 5.0, "beta": 0.045, "delta": 0.028, "tau": 0.010},
}


def production_config(grid_n: int = 512) -> RunConfig:
    overrides = {repr(eps): recovery.multipliers_for(eps, targets)
                 for eps, targets in PRODUCTION_TUNING.items()}
    return RunConfig(
        density=DensitySpec(kind="power_tail", p=2.0, box=PRODUCTION_BOX),
        H_list=[4.0], eps_list=sorted(PRODUCTION_TUNING, reverse=True),
        grid_n=grid_n, overrides=overrides)


def resolve_density(spec: DensitySpec) -> Density1D:
    if spec.kind == "power_tail":
        return make_power_tail(spec.p, box=spec.box)
    if spec.kind == "tabulated":
        if not spec.path:
            raise ValueError("tabulated density needs a path")
        data = np.loadtxt(spec.path, delimiter=",")
        return make_tabulated(data[:, 0], data[:, 1])
    raise ValueError(f"unknown density kind {spec.kind}")


def density_key(spec: DensitySpec) -> tuple:
    return (spec.kind, spec.p, spec.box, spec.path)


def resolve_solution(spec: DensitySpec):
    """OT solution + per-H domain cache (construction-heavy objects)."""
    key = density_key(spec)
    if key not in _SOLUTION_CACHE:
        d = resolve_density(spec)
        _SOLUTION_CACHE[key] = {"density": d, "sol": coulomb_ot.solve(d), "domains": {}}
    return _SOLUTION_CACHE[key]


def resolve_domain(entry, H: float):
    if H not in entry["domains"]:
        entry["domains"][H] = coulomb_ot.build_domain(entry["sol"], H)
    return entry["domains"][H]


def grid_halfwidth_for(spec: DensitySpec, requested: float | None) -> float:
    if requested is not None:
        return float(requested)
    if spec.box is not None:
        return float(spec.box)
    raise ValueError("grid_halfwidth is required for unbounded densities")


def run_recover(req: RecoverRequest) -> RecoverResponse:
    entry = resolve_solution(req.density)
    sol = entry["sol"]
    dom = resolve_domain(entry, req.H)
    x_half = grid_halfwidth_for(req.density, req.grid_halfwidth)
    sched = recovery.schedule(req.eps, req.H, req.overrides)
    part = recovery.build_partition(sol, dom, sched.delta)
    mp = recovery.build_main_plan(sol, part, sched, -x_half, x_half, req.grid_n)
    erec = recovery.main_plan_energy(mp, sol)
    rem = marginal_fix.remainder_plan(mp, sol)
    dp = marginal_fix.deconvolve(rem.pi0, req.eps)
    f_zpo_value = coulomb_ot.f_zpo(sol)
    rf = marginal_fix.assemble_recovery(mp, rem, dp, sol, f_zpo_value=f_zpo_value)

    xs = mp.gammabar.xs
    inside = dom.contains(xs, enlarged=True)
    rho_g = sol.density.pdf(xs)
    margin1 = float(np.min((rho_g - mp.rho1.values)[inside]) / sched.tau)
    margin2 = float(np.min((rho_g - mp.rho2.values)[inside]) / sched.tau)

    return RecoverResponse(
        eps=req.eps, H=req.H,
        schedule={"N": sched.N, "beta": sched.beta, "delta": sched.delta,
                  "tau": sched.tau, "overrides": sched.overrides},
        orderings_all_hold=sched.all_orderings_hold,
        mass=mp.mass, target_mass=mp.target_mass,
        mass_identity_error=mp.mass - mp.target_mass,
        marginal_margin_rho1=margin1, marginal_margin_rho2=margin2,
        main_energy={k: float(v) for k, v in erec.items()},
        remainder={
            "pe": rem.pe, "pe_scaled": rem.pe_scaled, "w2sq": rem.w2sq,
            "sup_s_minus_id": rem.sup_s_minus_id, "mass": rem.mass,
            "clipped_mass": rem.clipped_mass,
            "ke_scaled": math.sqrt(req.eps) * rf.remainder_energy["KE"],
            "deconv_pe_scaled": rf.remainder_energy["PE"] / math.sqrt(req.eps),
        },
        total_energy={k: float(v) for k, v in rf.energy.items()},
        marginal_residual_x=rf.marginal_residual_x,
        marginal_residual_y=rf.marginal_residual_y,
        f_zpo=rf.f_zpo, gap=rf.gap,
        psi_sq_csv=rf.psi_sq.to_csv() if req.dump_fields else None,
        remainder_csv={
            "sigma1.csv": rem.sigma1.to_csv(),
            "sigma2.csv": rem.sigma2.to_csv(),
            "pi0.csv": rem.pi0.to_csv(),
            "pi_tilde.csv": dp.pi_tilde.to_csv(),
        } if req.dump_remainder else None,
    )


def _config_overrides_for(cfg: RunConfig, eps: float) -> dict:
    key = repr(eps)
    if key in cfg.overrides:
        return cfg.overrides[key]
    return cfg.overrides.get("default", {})


def run_sweep(cfg: RunConfig) -> SweepResponse:
    t0 = time.time()
    cells: list[SweepCell] = []
    entry = resolve_solution(cfg.density)
    sol = entry["sol"]
    f_ot_rec = coulomb_ot.f_ot(sol)
    f_zpo_value = coulomb_ot.f_zpo(sol)
    for H in cfg.H_list:
        for eps in cfg.eps_list:
            try:
                req = RecoverRequest(density=cfg.density, H=H, eps=eps,
                                     grid_n=cfg.grid_n,
                                     grid_halfwidth=cfg.grid_halfwidth,
                                     overrides=_config_overrides_for(cfg, eps))
                rec = run_recover(req)
                gap_oracle = None
                if cfg.with_ground_oracle:
                    x_half = grid_halfwidth_for(cfg.density, cfg.grid_halfwidth)
                    xs, h, v = oracle.potential_grid(sol, -x_half, x_half,
                                                     cfg.oracle_grid_n)
                    gs = oracle.ground_state(v, eps, h, xs=xs)
                    gap_oracle = gs.eigenvalue - f_zpo_value
                sched = recovery.schedule(eps, H, req.overrides)
                failed = ",".join(k for k, v in sched.validity.items()
                                  if not v["holds"])
                cells.append(SweepCell(
                    H=H, eps=eps, ok=True,
                    F_OT=f_ot_rec["F_OT"], F_ZPO=f_zpo_value,
                    E_main=rec.main_energy["E"], E_total=rec.total_energy["E"],
                    gap_upper=rec.gap, gap_oracle=gap_oracle,
                    marginal_residual=max(rec.marginal_residual_x,
                                          rec.marginal_residual_y),
                    pe_remainder_scaled=rec.remainder["pe_scaled"],
                    ke_remainder_scaled=rec.remainder["ke_scaled"],
                    mass_identity_error=rec.mass_identity_error,
                    margin_rho1=rec.marginal_margin_rho1,
                    margin_rho2=rec.marginal_margin_rho2,
                    orderings_all_hold=rec.orderings_all_hold,
                    failed_orderings=failed,
                ))
            except Exception as exc:  # per-cell failures recorded, sweep continues
                cells.append(SweepCell(H=H, eps=eps, ok=False,
                                       error=f"{type(exc).__name__}: {exc}"))
    manifest = {
        "config_sha256": config_hash(cfg),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "wall_time_s": time.time() - t0,
        "seed": cfg.seed,
    }
    return SweepResponse(cells=cells, csv=sweep_csv(cells), manifest=manifest,
                         exit_ok=all(c.ok for c in cells))


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.model_dump(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


_CSV_COLUMNS = [
    "H", "eps", "ok", "error", "F_OT", "F_ZPO", "E_main", "E_total",
    "gap_upper", "gap_oracle", "marginal_residual", "pe_remainder_scaled",
    "ke_remainder_scaled", "mass_identity_error", "margin_rho1",
    "margin_rho2", "orderings_all_hold", "failed_orderings",
]


def _render(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_csv(cells: list[SweepCell]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(_CSV_COLUMNS)
    for c in cells:
        writer.writerow([_render(getattr(c, k)) for k in _CSV_COLUMNS])
    return buf.getvalue()


def ot_lattice_csv(sol, dom, n: int = 200) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "T", "u", "du", "ddu", "q"])
    xs = dom.lattice(max(2, n // 2))
    u = sol.u(xs)
    for i, x in enumerate(xs):
        writer.writerow([repr(float(x)), repr(float(sol.T(x))), repr(float(u[i])),
                         repr(float(sol.du(x))), repr(float(sol.ddu(x))),
                         repr(float(sol.q(x)))])
    return buf.getvalue()
