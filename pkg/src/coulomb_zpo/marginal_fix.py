"""Marginal repair: remainder plan along the linearized graph, plan
deconvolution, and assembly of the final recovery field.

Remainder plan.  The main plan leaves 1D remainders
sigma1 = rho - rho1_eps and sigma2 = rho - rho2_eps (equal mass).  The
connecting plan pushes sigma1 through the linearized map and then through
the monotone rearrangement S between T_delta # sigma1 and sigma2:

    pi0 = (Id, S o T_delta) # sigma1.

On the grid this is realized directly as the north-west-corner monotone
coupling between the atomic measures T_delta # sigma1 and sigma2, so both
marginals of pi0 are exact at machine precision and the support stays in
a tube around graph(T) whose width is governed by W2(T_delta#sigma1,
sigma2) (reported, together with sup|S(x) - x|).

Deconvolution.  For a plan Pi0 with marginals sigma1, sigma2, a radial
bump Theta_eps (the fixed polynomial bump (1-|x|^2)^3_+ rescaled by
eps^{-1/2} Theta(eps^{-1/4} x)) defines Pi_eps = Pi0 * Theta_eps and the
deconvolved plan

    Pi~(x,y) = sum_{x',y'} [sigma1(x) t(x'-x)/sigma1_eps(x')]
                           [sigma2(y) t(y'-y)/sigma2_eps(y')] Pi_eps(x',y'),

where t are the column sums of the discrete Theta taps and sigma_eps =
sigma * t.  Because the same taps appear in Pi_eps and in the
contraction, both marginals of Pi~ telescope back to sigma1, sigma2
exactly (machine precision), for any nonnegative Pi0.

The marginal of the bump is theta(s) = 128/(35 pi) (1-s^2)^{7/2}, whose
Fisher kinetic energy is exactly KE(theta) = 7/5; the kinetic energy of
the deconvolved plan obeys
    KE(Pi~) <= KE(sigma1) + KE(sigma2) + 2 KE(theta) eps^{-1/2} ||Pi0||_1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import coulomb_ot
from .coulomb_ot import CoulombOTSolution
from .gridfield import GridField1D, GridField2D, convolve2d, e_eps
from .recovery import MainPlan

__all__ = [
    "bump_theta_1d",
    "bump_ke_constant",
    "RemainderPlan",
    "remainder_plan",
    "DeconvolvedPlan",
    "deconvolve",
    "RecoveryField",
    "assemble_recovery",
    "deconvolution_pe_bound_check",
]

_DIV_FLOOR = 1e-300


def bump_theta_1d(s):
    """Marginal of the normalized radial bump (4/pi)(1-r^2)^3_+ on B(0,1)."""
    s = np.asarray(s, dtype=float)
    return (128.0 / (35.0 * math.pi)) * np.maximum(1.0 - s * s, 0.0) ** 3.5


def bump_ke_constant() -> float:
    """KE(theta) = int |theta'|^2/(8 theta) = 7/5, exactly."""
    return 1.4


def bump_taps_2d(eps: float, h: float):
    """Discrete taps of Theta_eps on the grid spacing h (odd-sized,
    normalized to unit sum) and their 1D column-sum marginal."""
    radius = eps**0.25
    k = max(1, int(math.ceil(radius / h)))
    t = np.arange(-k, k + 1) * h
    xg, yg = np.meshgrid(t, t, indexing="ij")
    w = np.maximum(1.0 - (xg**2 + yg**2) / radius**2, 0.0) ** 3
    total = w.sum()
    if total <= 0:
        raise ValueError("bump kernel under-resolved on this grid")
    w /= total
    return w, w.sum(axis=1)


@dataclass
class RemainderPlan:
    sigma1: GridField1D
    sigma2: GridField1D
    pi0: GridField2D
    pe: float
    pe_scaled: float
    w2sq: float
    sup_s_minus_id: float
    mass: float
    clipped_mass: float


def _monotone_coupling(src_pos, src_w, dst_pos, dst_w):
    """North-west-corner coupling of two equal-mass sorted atom lists.
    Returns triples (i, j, mass) pairing source atom i with target atom j."""
    pairs = []
    i = j = 0
    ri, rj = src_w[0], dst_w[0]
    while True:
        m = min(ri, rj)
        if m > 0:
            pairs.append((i, j, m))
        ri -= m
        rj -= m
        if ri <= 1e-18 * src_w[i]:
            i += 1
            if i >= src_w.size:
                break
            ri = src_w[i]
        if rj <= 1e-18 * max(dst_w[j], 1e-300):
            j += 1
            if j >= dst_w.size:
                rj = math.inf  # dump any residual rounding mass on the last atom
                j = dst_w.size - 1
            else:
                rj = dst_w[j]
    return pairs


def remainder_plan(mp: MainPlan, sol: CoulombOTSolution) -> RemainderPlan:
    """Builds pi0 = (Id, S o T_delta) # sigma1 as the exact monotone
    coupling between T_delta # sigma1 and sigma2 on the grid."""
    g = mp.gammabar
    xs = g.xs
    h = g.hx
    rho_grid = sol.density.pdf(xs)
    s1 = rho_grid - mp.rho1.values
    s2 = rho_grid - mp.rho2.values
    clipped = float((-np.minimum(s1, 0)).sum() + (-np.minimum(s2, 0)).sum()) * h
    if np.min(s1) < -1e-6 or np.min(s2) < -1e-6:
        raise ValueError("remainder marginals significantly negative; "
                         "main-plan marginals exceed rho (upstream bug)")
    s1 = np.maximum(s1, 0.0)
    s2 = np.maximum(s2, 0.0)
    m1, m2 = s1.sum() * h, s2.sum() * h
    if abs(m1 - m2) > 1e-6 * max(m1, m2):
        raise ValueError(f"remainder mass mismatch: {m1} vs {m2}")
    s2 *= m1 / m2

    # subdivide each cell's remainder mass into equal sub-atoms: the
    # coupling diagnostics (PE, W2, sup|S - id|) then see sub-cell
    # positions, while the raster assigns mass to the parent cells so the
    # marginals of pi0 stay exact at machine precision
    k_sub = 3
    offs = (np.arange(k_sub) + 0.5) / k_sub - 0.5

    def refine(idx_keep, weights):
        pos = (xs[idx_keep][:, None] + offs[None, :] * h).ravel()
        wgt = np.repeat(weights / k_sub, k_sub)
        parent = np.repeat(np.nonzero(idx_keep)[0], k_sub)
        return pos, wgt, parent

    src_x, src_w, src_cell = refine(s1 > 0, s1[s1 > 0] * h)
    dst_y, dst_w, dst_cell = refine(s2 > 0, s2[s2 > 0] * h)
    # images clipped to the box; for box-supported densities the map
    # closes inside and the clip never acts
    src_p = np.clip(mp.part.t_delta(src_x), xs[0], xs[-1])
    order = np.argsort(src_p, kind="stable")
    src_x, src_p, src_w, src_cell = (src_x[order], src_p[order],
                                     src_w[order], src_cell[order])

    pairs = _monotone_coupling(src_p, src_w.copy(), dst_y, dst_w.copy())
    values = np.zeros_like(g.values)
    dom = mp.part.dom
    sup_dev = 0.0
    w2sq = 0.0
    pe = 0.0
    u_sub_src = sol.u(src_x)
    u_sub_dst = sol.u(dst_y)
    for i, j, m in pairs:
        values[src_cell[i], dst_cell[j]] += m / (h * h)
        dev = abs(dst_y[j] - src_p[i])
        w2sq += m * dev * dev
        if dom.contains(src_x[i], enlarged=True):
            sup_dev = max(sup_dev, dev)
        xi, yj = src_x[i], dst_y[j]
        if xi != yj:
            pe += m * (1.0 / abs(xi - yj) - u_sub_src[i] - u_sub_dst[j])
    pi0 = GridField2D(g.x0, g.y0, h, h, values)
    eps = mp.sched.eps
    return RemainderPlan(
        sigma1=GridField1D(g.x0, h, s1),
        sigma2=GridField1D(g.y0, h, s2),
        pi0=pi0, pe=pe, pe_scaled=pe / math.sqrt(eps),
        w2sq=w2sq, sup_s_minus_id=sup_dev, mass=float(m1),
        clipped_mass=clipped,
    )


@dataclass
class DeconvolvedPlan:
    pi_tilde: GridField2D
    pi_eps: GridField2D
    taps_2d: np.ndarray
    taps_1d: np.ndarray
    eps: float

    def support_growth(self, pi0: GridField2D) -> float:
        """Max bounding-box growth of supp(pi_tilde) vs supp(pi0); the
        deconvolved plan lives within 2 eps^{1/4} of the original."""
        def bbox(f):
            nz = np.nonzero(f.values > 1e-14 * f.values.max())
            return (f.xs[nz[0].min()], f.xs[nz[0].max()],
                    f.ys[nz[1].min()], f.ys[nz[1].max()])

        b0 = bbox(pi0)
        b1 = bbox(self.pi_tilde)
        return max(b0[0] - b1[0], b1[1] - b0[1], b0[2] - b1[2], b1[3] - b0[3])


def deconvolve(pi0: GridField2D, eps: float) -> DeconvolvedPlan:
    """Plan deconvolution on the grid; marginal-exact by the telescoping
    identity (the same taps appear in the blur and the contraction)."""
    taps, t1 = bump_taps_2d(eps, pi0.hx)
    k = t1.size // 2
    pi_eps = convolve2d(pi0, taps)

    s1 = pi0.values.sum(axis=1)  # discrete masses / (hx hy)
    s2 = pi0.values.sum(axis=0)
    n1, n2 = s1.size, s2.size
    s1_eps = np.convolve(s1, t1, mode="full")  # length n + 2k
    s2_eps = np.convolve(s2, t1, mode="full")

    # D[i, i'] = s(i) t(i' - i) / s_eps(i'), shape (n, n + 2k)
    def contraction(s, s_eps, n):
        d = np.zeros((n, n + 2 * k))
        idx = np.arange(n)
        for o in range(2 * k + 1):
            col = idx + o
            d[idx, col] = s * t1[o]
        good = s_eps > _DIV_FLOOR
        d[:, good] /= s_eps[good]
        d[:, ~good] = 0.0
        return d

    d1 = contraction(s1, s1_eps, n1)
    d2 = contraction(s2, s2_eps, n2)
    tilde_vals = d1 @ pi_eps.values @ d2.T
    pi_tilde = GridField2D(pi0.x0, pi0.y0, pi0.hx, pi0.hy, tilde_vals)
    return DeconvolvedPlan(pi_tilde=pi_tilde, pi_eps=pi_eps, taps_2d=taps,
                           taps_1d=t1, eps=eps)


@dataclass
class RecoveryField:
    psi_sq: GridField2D
    energy: dict
    marginal_residual_x: float
    marginal_residual_y: float
    f_zpo: float
    gap: float
    main_energy: dict
    remainder_energy: dict


def assemble_recovery(mp: MainPlan, rem: RemainderPlan, dp: DeconvolvedPlan,
                      sol: CoulombOTSolution, f_zpo_value: float | None = None,
                      mask_band: float | None = None) -> RecoveryField:
    """psi^2 = gammabar + deconvolved remainder; energies and marginal
    residuals against rho on the grid."""
    g = mp.gammabar
    pt = dp.pi_tilde
    if (pt.values.shape != g.values.shape or pt.x0 != g.x0 or pt.hx != g.hx):
        raise ValueError("incompatible grids between main plan and remainder")
    psi_sq = GridField2D(g.x0, g.y0, g.hx, g.hy, g.values + pt.values)
    v = sol.V_grid(psi_sq.xs, psi_sq.ys)
    mask = psi_sq.diagonal_mask(mask_band)
    eps = mp.sched.eps
    energy = e_eps(psi_sq, v, eps, mask=mask)
    main_rec = e_eps(g, v, eps, mask=mask)
    rem_rec = e_eps(pt, v, eps, mask=mask)
    rho_grid = sol.density.pdf(psi_sq.xs)
    res_x = float(np.abs(psi_sq.marginal_x().values - rho_grid).sum() * g.hx)
    res_y = float(np.abs(psi_sq.marginal_y().values - rho_grid).sum() * g.hy)
    if f_zpo_value is None:
        f_zpo_value = coulomb_ot.f_zpo(sol)
    return RecoveryField(
        psi_sq=psi_sq, energy=energy,
        marginal_residual_x=res_x, marginal_residual_y=res_y,
        f_zpo=f_zpo_value, gap=energy["E"] - f_zpo_value,
        main_energy=main_rec, remainder_energy=rem_rec,
    )


def deconvolution_pe_bound_check(pi0: GridField2D, dp: DeconvolvedPlan,
                                 sol: CoulombOTSolution,
                                 mask_band: float | None = None) -> dict:
    """Both sides of the deconvolution potential-energy estimate
    eps^{-1/2} int V dPi~ <= C_H eps^{-1/2} int V dPi0 + C ||Pi0||_1,
    with the joint measured constant lhs/(r1 + r2)."""
    eps = dp.eps
    v0 = sol.V_grid(pi0.xs, pi0.ys)
    m0 = pi0.diagonal_mask(mask_band)
    pe0 = float((np.where(m0, 0.0, v0) * pi0.values).sum() * pi0.cell_area())
    pt = dp.pi_tilde
    vt = sol.V_grid(pt.xs, pt.ys)
    mt = pt.diagonal_mask(mask_band)
    pet = float((np.where(mt, 0.0, vt) * pt.values).sum() * pt.cell_area())
    mass = pi0.mass()
    lhs = pet / math.sqrt(eps)
    r1 = pe0 / math.sqrt(eps)
    r2 = mass
    return {
        "lhs": lhs, "pe_pi0_scaled": r1, "mass": r2,
        "C_joint": lhs / (r1 + r2) if (r1 + r2) > 0 else math.inf,
        "pe_tilde": pet, "pe_pi0": pe0,
    }
