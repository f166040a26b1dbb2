"""Uniform-grid fields in 1D/2D with the energy, convolution, and
1D-Wasserstein operations used by the recovery construction and oracles.

Kinetic energy differentiates sqrt(gamma) (centered differences inside,
one-sided at the boundary) so that the discrete functional matches
int |grad psi|^2 / 2 for psi = sqrt(gamma) and remains finite where gamma
vanishes.  This discretization is exactly convex and subadditive in gamma:
|d sqrt(f+g)| <= hypot(d sqrt f, d sqrt g) pointwise, because
(u, v) -> sqrt(u^2 + v^2) is 1-Lipschitz.

The potential energy masks cells within a configurable band of the
diagonal (Coulomb singularity); the constructions never place mass there,
and the masked-mass total is reported alongside.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d as _sp_convolve2d

__all__ = ["GridField1D", "GridField2D", "e_eps", "convolve2d", "w2_1d"]


@dataclass
class GridField1D:
    x0: float
    h: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.n)

    def mass(self) -> float:
        return float(self.values.sum() * self.h)

    def l1(self) -> float:
        return float(np.abs(self.values).sum() * self.h)

    def linf(self) -> float:
        return float(np.abs(self.values).max())

    def kinetic_energy(self) -> float:
        """int |d sqrt(f)|^2 / 2 with centered interior differences."""
        s = np.sqrt(np.maximum(self.values, 0.0))
        g = np.gradient(s, self.h)
        return float((g * g).sum() * self.h / 2.0)

    def to_csv(self) -> str:
        header = json.dumps({"x0": float(self.x0).hex(),
                             "h": float(self.h).hex(), "n": self.n})
        lines = ["# " + header, "x,value"]
        xs = self.xs
        lines += [f"{xs[i]!r},{self.values[i].hex()}" for i in range(self.n)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "GridField1D":
        lines = text.strip().split("\n")
        meta = json.loads(lines[0][2:])
        vals = np.array([float.fromhex(line.rsplit(",", 1)[1])
                         for line in lines[2:]])
        return cls(float.fromhex(meta["x0"]), float.fromhex(meta["h"]), vals)


@dataclass
class GridField2D:
    x0: float
    y0: float
    hx: float
    hy: float
    values: np.ndarray  # shape (nx, ny); values[i, j] ~ f(x_i, y_j)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("2D field needs a 2D value array")
        self.x0, self.y0 = float(self.x0), float(self.y0)
        self.hx, self.hy = float(self.hx), float(self.hy)

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    def cell_area(self) -> float:
        return self.hx * self.hy

    def mass(self) -> float:
        return float(self.values.sum() * self.hx * self.hy)

    def marginal_x(self) -> GridField1D:
        return GridField1D(self.x0, self.hx, self.values.sum(axis=1) * self.hy)

    def marginal_y(self) -> GridField1D:
        return GridField1D(self.y0, self.hy, self.values.sum(axis=0) * self.hx)

    def kinetic_energy(self) -> float:
        s = np.sqrt(np.maximum(self.values, 0.0))
        gx, gy = np.gradient(s, self.hx, self.hy)
        return float(((gx * gx) + (gy * gy)).sum() * self.hx * self.hy / 2.0)

    def diagonal_mask(self, band: float | None = None) -> np.ndarray:
        """True on cells with |x - y| < band (default 2 max(hx, hy))."""
        if band is None:
            band = 2.0 * max(self.hx, self.hy)
        diff = np.abs(self.xs[:, None] - self.ys[None, :])
        return diff < band

    # -- serialization (CSV body + JSON header, bit-exact round trip) -------

    def to_csv(self) -> str:
        header = json.dumps({
            "x0": self.x0.hex(), "y0": self.y0.hex(),
            "hx": self.hx.hex(), "hy": self.hy.hex(),
            "nx": self.nx, "ny": self.ny,
        })
        buf = io.StringIO()
        buf.write("# " + header + "\n")
        buf.write("x,y,value\n")
        xs, ys = self.xs, self.ys
        for i in range(self.nx):
            for j in range(self.ny):
                buf.write(f"{xs[i]!r},{ys[j]!r},{self.values[i, j].hex()}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridField2D":
        lines = text.strip().split("\n")
        meta = json.loads(lines[0][2:])
        vals = np.empty((meta["nx"], meta["ny"]))
        k = 2
        for i in range(meta["nx"]):
            for j in range(meta["ny"]):
                vals[i, j] = float.fromhex(lines[k].rsplit(",", 1)[1])
                k += 1
        return cls(float.fromhex(meta["x0"]), float.fromhex(meta["y0"]),
                   float.fromhex(meta["hx"]), float.fromhex(meta["hy"]), vals)


def e_eps(gamma: GridField2D, v_values: np.ndarray, eps: float,
          mask: np.ndarray | None = None) -> dict:
    """Rescaled energy of psi = sqrt(gamma):
    KE = int |grad sqrt(gamma)|^2/2, PE = int V gamma (masked cells
    dropped), E = sqrt(eps) KE + PE / sqrt(eps)."""
    if v_values.shape != gamma.values.shape:
        raise ValueError("potential grid shape mismatch")
    ke = gamma.kinetic_energy()
    vals = gamma.values
    area = gamma.cell_area()
    if mask is None:
        mask = np.zeros_like(vals, dtype=bool)
    v_clean = np.where(mask, 0.0, v_values)  # masked cells may hold inf
    pe = float((v_clean * vals).sum() * area)
    masked_mass = float(vals[mask].sum() * area)
    if not np.isfinite(pe):
        raise FloatingPointError("potential energy is not finite on unmasked cells")
    return {
        "KE": ke,
        "PE": pe,
        "E": float(np.sqrt(eps) * ke + pe / np.sqrt(eps)),
        "masked_mass": masked_mass,
    }


def convolve2d(plan: GridField2D, kernel_taps: np.ndarray) -> GridField2D:
    """Convolution with a small tap array on the same grid spacing.

    Taps must be odd-sized in both directions and are normalized to unit
    discrete mass, so the convolution preserves mass exactly; the domain
    is padded by the tap extent ('full' convolution).
    """
    taps = np.asarray(kernel_taps, dtype=float)
    if taps.ndim != 2 or taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
        raise ValueError("kernel taps must be a 2D odd-sized array")
    total = taps.sum()
    if total <= 0:
        raise ValueError("kernel taps must have positive mass")
    taps = taps / total
    out = _sp_convolve2d(plan.values, taps, mode="full")
    kx = taps.shape[0] // 2
    ky = taps.shape[1] // 2
    return GridField2D(plan.x0 - kx * plan.hx, plan.y0 - ky * plan.hy,
                       plan.hx, plan.hy, out)


def _quantile_data(f: GridField1D):
    """Positions, per-cell masses, and cumulative masses of a 1D field."""
    w = np.maximum(f.values, 0.0) * f.h
    keep = w > 0
    return f.xs[keep], w[keep], np.cumsum(w[keep])


def _quantile_eval(pos: np.ndarray, cum: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Step quantile function of the atomic measure sum_i w_i delta_{x_i}."""
    idx = np.clip(np.searchsorted(cum, t, side="left"), 0, pos.size - 1)
    return pos[idx]


def w2_1d(mu: GridField1D, nu: GridField1D, mass_tol: float = 1e-8) -> dict:
    """Squared 2-Wasserstein distance between two nonnegative 1D fields of
    (nearly) equal mass, via the quantile identity
        W2^2 = int_0^m |F_mu^{-1}(t) - F_nu^{-1}(t)|^2 dt,
    treating each field as an atomic measure on its cell centers (the
    monotone pairing is exact for atoms).  Also returns the monotone map
    S = F_nu^{-1} o F_mu sampled on mu's support."""
    m_mu, m_nu = mu.mass(), nu.mass()
    if m_mu <= 0 or m_nu <= 0:
        raise ValueError("w2_1d needs positive-mass inputs")
    if abs(m_mu - m_nu) > mass_tol * max(m_mu, m_nu):
        raise ValueError(f"mass mismatch beyond tolerance: {m_mu} vs {m_nu}")
    scale = m_mu / m_nu
    p1, w1, c1 = _quantile_data(mu)
    p2, w2_, c2 = _quantile_data(nu)
    c2 = c2 * scale
    # merged breakpoints of both step quantile functions
    cuts = np.unique(np.concatenate([c1, c2]))
    cuts = cuts[(cuts > 0) & (cuts <= min(c1[-1], c2[-1]) + 1e-300)]
    lefts = np.concatenate([[0.0], cuts[:-1]])
    mids = 0.5 * (lefts + cuts)
    q1 = _quantile_eval(p1, c1, mids)
    q2 = _quantile_eval(p2, c2, mids)
    w2sq = float(((q1 - q2) ** 2 * (cuts - lefts)).sum())
    s_map = _quantile_eval(p2, c2, np.minimum(c1 - 0.5 * w1, c2[-1]))
    return {"w2sq": w2sq, "S_x": p1, "S_y": s_map}
