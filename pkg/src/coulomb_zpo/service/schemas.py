"""Pydantic request/response models for the compute service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator


class DensitySpec(BaseModel):
    kind: Literal["power_tail", "tabulated"] = "power_tail"
    p: Optional[float] = 2.0
    box: Optional[float] = None
    path: Optional[str] = None  # two-column CSV (x, pdf) for tabulated


class DensityDescribeRequest(BaseModel):
    density: DensitySpec = Field(default_factory=DensitySpec)
    probes: list[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0])
    ke_window: float = 50.0


class DensityDescribeResponse(BaseModel):
    kind: str
    params: dict
    probes: list[float]
    pdf: list[float]
    cdf: list[float]
    kinetic_energy: float
    tail_coefficient_3_50: Optional[float] = None


class OTRequest(BaseModel):
    density: DensitySpec = Field(default_factory=DensitySpec)
    H: float = 4.0
    lattice_n: int = 200
    quad_window: float = 200.0


class OTResponse(BaseModel):
    F_OT: float
    F_OT_dual_value: float
    F_OT_dual_discrepancy: float
    F_ZPO: float
    L: float
    r_H: float
    delta_gap: float
    max_ddu: float
    lattice_csv: str


class ValidateParamsRequest(BaseModel):
    eps: float
    H: float = 4.0
    overrides: dict[str, float] = Field(default_factory=dict)

    @field_validator("eps")
    @classmethod
    def _eps_range(cls, v):
        if not (0.0 < v < 0.3678794411714423):
            raise ValueError("eps must lie in (0, e^-1)")
        return v


class OrderingRecord(BaseModel):
    name: str
    ratio: float
    holds: bool


class ValidateParamsResponse(BaseModel):
    eps: float
    H: float
    N: float
    beta: float
    delta: float
    tau: float
    orderings: list[OrderingRecord]
    all_hold: bool
    all_pass_eps_symbolic: str


class RecoverRequest(BaseModel):
    density: DensitySpec = Field(default_factory=lambda: DensitySpec(box=7.0))
    H: float = 4.0
    eps: float = 1e-3
    grid_n: int = 512
    grid_halfwidth: Optional[float] = None  # defaults to the density box
    overrides: dict[str, float] = Field(default_factory=dict)
    dump_fields: bool = False
    dump_remainder: bool = False


class RecoverResponse(BaseModel):
    eps: float
    H: float
    schedule: dict
    orderings_all_hold: bool
    mass: float
    target_mass: float
    mass_identity_error: float
    marginal_margin_rho1: float
    marginal_margin_rho2: float
    main_energy: dict
    remainder: dict
    total_energy: dict
    marginal_residual_x: float
    marginal_residual_y: float
    f_zpo: float
    gap: float
    psi_sq_csv: Optional[str] = None
    remainder_csv: Optional[dict[str, str]] = None


class OracleRequest(BaseModel):
    mode: Literal["ground", "constrained", "delta"]
    density: DensitySpec = Field(default_factory=DensitySpec)
    eps: float = 1e-3
    grid_n: int = 256
    domain_halfwidth: float = 3.0
    # delta mode
    d2v_diag: list[float] = Field(default_factory=lambda: [1.0, 0.0])
    eps_sequence: list[float] = Field(default_factory=lambda: [1e-3, 1e-4, 1e-5])


class OracleResponse(BaseModel):
    mode: str
    records: dict


class SweepCell(BaseModel):
    H: float
    eps: float
    ok: bool
    error: Optional[str] = None
    F_OT: Optional[float] = None
    F_ZPO: Optional[float] = None
    E_main: Optional[float] = None
    E_total: Optional[float] = None
    gap_upper: Optional[float] = None
    gap_oracle: Optional[float] = None
    marginal_residual: Optional[float] = None
    pe_remainder_scaled: Optional[float] = None
    ke_remainder_scaled: Optional[float] = None
    mass_identity_error: Optional[float] = None
    margin_rho1: Optional[float] = None
    margin_rho2: Optional[float] = None
    orderings_all_hold: Optional[bool] = None
    failed_orderings: Optional[str] = None


class RunConfig(BaseModel):
    density: DensitySpec = Field(default_factory=lambda: DensitySpec(box=7.0))
    H_list: list[float] = Field(default_factory=lambda: [4.0])
    eps_list: list[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    grid_n: int = 512
    grid_halfwidth: Optional[float] = None
    overrides: dict[str, dict[str, float]] = Field(default_factory=dict)
    # keys of `overrides` are repr(eps) strings or "default"
    with_ground_oracle: bool = False
    oracle_grid_n: int = 256
    seed: int = 0

    @field_validator("H_list", "eps_list")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("lists must be nonempty")
        return v

    @field_validator("eps_list")
    @classmethod
    def _eps_range(cls, v):
        for e in v:
            if not (0.0 < e < 0.3678794411714423):
                raise ValueError("eps values must lie in (0, e^-1)")
        return v


class SweepResponse(BaseModel):
    cells: list[SweepCell]
    csv: str
    manifest: dict
    exit_ok: bool
