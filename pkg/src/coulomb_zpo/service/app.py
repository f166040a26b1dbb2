"""FastAPI service exposing the pipeline stages as endpoints."""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, coulomb_ot, oracle, pipeline, recovery
from ..density import kinetic_energy_1d, tail_coefficient
from .schemas import (
    DensityDescribeRequest,
    DensityDescribeResponse,
    OracleRequest,
    OracleResponse,
    OrderingRecord,
    OTRequest,
    OTResponse,
    RecoverRequest,
    RecoverResponse,
    RunConfig,
    SweepResponse,
    ValidateParamsRequest,
    ValidateParamsResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="coulomb-zpo", version=__version__)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/density/describe", response_model=DensityDescribeResponse)
    def describe_density(req: DensityDescribeRequest):
        try:
            d = pipeline.resolve_density(req.density)
            probes = np.asarray(req.probes, dtype=float)
            lo, hi = d.support
            w = min(req.ke_window, hi - 1e-9) if np.isfinite(hi) else req.ke_window
            tail = None
            if not np.isfinite(hi):
                tail = tail_coefficient(d, 3.0, 50.0)
            return DensityDescribeResponse(
                kind=d.kind, params=d.params, probes=list(map(float, probes)),
                pdf=[float(v) for v in np.atleast_1d(d.pdf(probes))],
                cdf=[float(v) for v in np.atleast_1d(d.cdf(probes))],
                kinetic_energy=kinetic_energy_1d(d, (-w, w)),
                tail_coefficient_3_50=tail,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/ot", response_model=OTResponse)
    def ot(req: OTRequest):
        try:
            entry = pipeline.resolve_solution(req.density)
            sol = entry["sol"]
            dom = pipeline.resolve_domain(entry, req.H)
            rec = coulomb_ot.f_ot(sol, req.quad_window)
            return OTResponse(
                F_OT=rec["F_OT"], F_OT_dual_value=rec["dual_value"],
                F_OT_dual_discrepancy=rec["dual_discrepancy"],
                F_ZPO=coulomb_ot.f_zpo(sol),
                L=dom.L, r_H=dom.r_H, delta_gap=dom.delta_gap,
                max_ddu=dom.max_ddu,
                lattice_csv=pipeline.ot_lattice_csv(sol, dom, req.lattice_n),
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/validate-params", response_model=ValidateParamsResponse)
    def validate_params(req: ValidateParamsRequest):
        try:
            sched = recovery.schedule(req.eps, req.H, req.overrides)
            allpass = recovery.find_all_pass_eps()
            return ValidateParamsResponse(
                eps=req.eps, H=req.H, N=sched.N, beta=sched.beta,
                delta=sched.delta, tau=sched.tau,
                orderings=[OrderingRecord(name=k, ratio=v["ratio"], holds=v["holds"])
                           for k, v in sched.validity.items()],
                all_hold=sched.all_orderings_hold,
                all_pass_eps_symbolic=allpass["eps_symbolic"],
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/recover", response_model=RecoverResponse)
    def recover(req: RecoverRequest):
        try:
            return pipeline.run_recover(req)
        except (ValueError, FloatingPointError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/oracle", response_model=OracleResponse)
    def run_oracle(req: OracleRequest):
        try:
            if req.mode == "ground":
                entry = pipeline.resolve_solution(req.density)
                sol = entry["sol"]
                xs, h, v = oracle.potential_grid(sol, -req.domain_halfwidth,
                                                 req.domain_halfwidth, req.grid_n)
                pred = oracle.predicted_gamma_limit(sol, -req.domain_halfwidth,
                                                    req.domain_halfwidth)
                gs = oracle.ground_state(v, req.eps, h, xs=xs, predicted_limit=pred)
                return OracleResponse(mode="ground", records={
                    "eigenvalue": gs.eigenvalue,
                    "predicted_limit": pred,
                    "residual": gs.residual,
                    "iterations": gs.iterations,
                    "markov": {repr(t): {"mass": gs.mass_above(v, t),
                                         "bound": gs.markov_bound(t)}
                               for t in (0.01, 0.1)},
                })
            if req.mode == "constrained":
                entry = pipeline.resolve_solution(req.density)
                sol = entry["sol"]
                xs, h, v = oracle.potential_grid(sol, -req.domain_halfwidth,
                                                 req.domain_halfwidth, req.grid_n)
                rho = sol.density.pdf(xs)
                rho = rho / (rho.sum() * h)
                res = oracle.constrained_min(v, rho, rho, req.eps, h)
                return OracleResponse(mode="constrained", records={
                    "energy": res.energy,
                    "kkt_residual": res.kkt_residual,
                    "marginal_residual": res.marginal_residual,
                    "iterations": res.iterations,
                })
            trace = oracle.delta_recovery(np.diag(req.d2v_diag), req.eps_sequence)
            return OracleResponse(mode="delta", records={"trace": trace})
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(cfg: RunConfig):
        return pipeline.run_sweep(cfg)

    return app


app = create_app()
