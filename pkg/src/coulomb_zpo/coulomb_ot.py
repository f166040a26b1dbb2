"""Exact optimal-transport structure of the 1D repulsive Coulomb problem
with two marginals equal to a median-centered density rho.

Everything is explicit in terms of the repartition function F of rho:

* optimal map        T(x) = F^{-1}(F(x) + 1/2)   (x < 0),
                     T(x) = F^{-1}(F(x) - 1/2)   (x > 0);
  T swaps the two half-lines, is increasing on each, and is an involution.
* map derivative     T'(x) = rho(x) / rho(T(x))        (Monge-Ampere),
  and T''(x) = (rho'(x) - rho'(T(x)) T'(x)^2) / rho(T(x)).
* dual potential     u'(x) = -sign(x) / (T(x) - x)^2, integrated from 0
  and anchored so that u(x0) + u(T(x0)) = 1/|x0 - T(x0)| at x0 = -1;
  the same identity then holds on the whole graph and
      V(x, y) = 1/|x - y| - u(x) - u(y) >= 0,  V = 0 exactly on graph(T).
* second derivative  u''(x) = 2 sign(x) (T'(x) - 1) / (T(x) - x)^3.
* Hessian of V       D2V(x,y) = 2/|x-y|^3 [[1,-1],[-1,1]] - diag(u'', u''),
  which on the graph is rank-1 PSD with kernel direction (1, T'(x)); its
  positive eigenvalue is
      q(x) = 4/|T(x) - x|^3 - u''(x) - u''(T(x)) = trace of the Hessian,
  and the PSD square root is  A(x) = D2V(x, T(x)) / sqrt(q(x)).

The two functionals of the expansion are quadratures over rho:

    F_OT  = int rho(x) / |x - T(x)| dx,
    F_ZPO = 1/2 int sqrt(q(x)) rho(x) dx.

For the Cauchy density T(x) = -1/x, u''(x) = 2|x|(x^2-1)/(1+x^2)^3,
q(x) = 2|x|(1+x^4)/(1+x^2)^3 and F_OT = 1/pi, all used as closed-form
oracles in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .density import Density1D

__all__ = [
    "CoulombOTSolution",
    "DomainH",
    "solve",
    "f_ot",
    "f_zpo",
    "quadratic_growth_check",
]

_ANCHOR_X0 = -1.0


class CoulombOTSolution:
    """Map, potential and Hessian field of the 1D Coulomb OT problem.

    Immutable after construction; evaluation methods are vectorized and
    re-entrant.  The potential u(x) = u0 + int_0^x u' is tabulated once on
    probability-graded knots (panelwise Gauss-Legendre, so the table is
    exact to ~1e-13) and arbitrary abscissae are completed by one extra
    panel of the same rule; this keeps u evaluation vectorized and cheap
    even when the quantile has no closed form.
    """

    _TABLE_PANELS = 12000
    _TABLE_SMIN = 1e-4
    _GL_NODES = 8

    def __init__(self, density: Density1D):
        self.density = density
        self._compact = np.isfinite(density.support[0])
        self._build_u_table()
        # anchor: 2 u0 + I(x0) + I(T(x0)) = 1/|x0 - T(x0)|
        x0 = _ANCHOR_X0
        tx0 = float(self.T(x0))
        i0 = float(self._u_raw(np.asarray([x0]))[0])
        i1 = float(self._u_raw(np.asarray([tx0]))[0])
        self.u0 = 0.5 * (1.0 / abs(x0 - tx0) - i0 - i1)
        if self._compact:
            # u is constant beyond the support edges
            self.u_at_inf = self.u0 + self._table_I[-1]
            self.u_at_minus_inf = self.u0 + self._table_I[0]
        else:
            # limits of u at +-infinity; substitute y = 1/x so the tail
            # integrand du(1/y)/y^2 is smooth and bounded near y = 0
            tail_pos, _ = integrate.quad(lambda y: self.du(1.0 / y) / y**2,
                                         0.0, 1.0 / self._knots[-1], limit=200)
            tail_neg, _ = integrate.quad(lambda y: self.du(1.0 / y) / y**2,
                                         1.0 / self._knots[0], 0.0, limit=200)
            self.u_at_inf = self.u0 + self._table_I[-1] + tail_pos
            self.u_at_minus_inf = self.u0 + self._table_I[0] - tail_neg

    def _build_u_table(self):
        # probability-graded core knots, then geometric knots out to 1e3x
        # the core edge; u' decays like 1/x^2, so Gauss panels on geometric
        # tail knots stay at machine accuracy
        m = self._TABLE_PANELS
        s = np.linspace(self._TABLE_SMIN, 1.0 - self._TABLE_SMIN, m + 1)
        core = np.asarray(self.density.quantile(s), dtype=float)
        core[m // 2] = 0.0  # s = 1/2 is the median, exactly 0 by centering
        if self._compact:
            lo, hi = self.density.support
            knots = np.unique(np.concatenate([[lo], core, [hi]]))
        else:
            edge = max(abs(core[0]), abs(core[-1]))
            tail = np.geomspace(edge, 1e3 * edge, 80)[1:]
            knots = np.unique(np.concatenate([-tail, core, tail]))
        k0 = int(np.searchsorted(knots, 0.0))
        gl_x, gl_w = np.polynomial.legendre.leggauss(self._GL_NODES)
        half = 0.5 * np.diff(knots)
        mid = 0.5 * (knots[:-1] + knots[1:])
        nodes = mid[:, None] + half[:, None] * gl_x[None, :]
        vals = self._du_array(nodes)
        panel = (vals @ gl_w) * half
        cum = np.concatenate([[0.0], np.cumsum(panel)])
        self._knots = knots
        self._table_I = cum - cum[k0]
        self._gl = (gl_x, gl_w)

    def _du_array(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        nz = x != 0.0
        xn = x[nz]
        out[nz] = -np.sign(xn) / (self.T(xn) - xn) ** 2
        return out

    def _u_raw(self, x):
        """I(x) = int_0^x u'(t) dt, vectorized (x within the table range)."""
        x = np.asarray(x, dtype=float)
        knots = self._knots
        if np.any(x < knots[0]) or np.any(x > knots[-1]):
            raise ValueError("u evaluation outside the tabulated range")
        idx = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, knots.size - 2)
        left = knots[idx]
        gl_x, gl_w = self._gl
        half = 0.5 * (x - left)
        mid = 0.5 * (x + left)
        nodes = mid[:, None] + half[:, None] * gl_x[None, :]
        partial = (self._du_array(nodes) @ gl_w) * half
        return self._table_I[idx] + partial

    # -- optimal map -------------------------------------------------------

    def T(self, x):
        x_arr = np.asarray(x, dtype=float)
        if np.any(x_arr == 0.0):
            raise ValueError("T has an asymptote at x = 0")
        t = self.density.cdf(x_arr) + np.where(x_arr < 0, 0.5, -0.5)
        out = self.density.quantile(np.clip(t, 1e-300, 1.0 - 1e-16))
        return out if np.ndim(x) else float(out)

    def dT(self, x):
        x_arr = np.asarray(x, dtype=float)
        out = self.density.pdf(x_arr) / self.density.pdf(self.T(x_arr))
        return out if np.ndim(x) else float(out)

    def ddT(self, x):
        x_arr = np.asarray(x, dtype=float)
        tp = self.dT(x_arr)
        tx = self.T(x_arr)
        out = (self.density.dpdf(x_arr) - self.density.dpdf(tx) * tp * tp) / self.density.pdf(tx)
        return out if np.ndim(x) else float(out)

    # -- Kantorovich potential ---------------------------------------------

    def du(self, x):
        x_arr = np.asarray(x, dtype=float)
        out = -np.sign(x_arr) / (self.T(x_arr) - x_arr) ** 2
        return out if np.ndim(x) else float(out)

    def ddu(self, x):
        x_arr = np.asarray(x, dtype=float)
        out = 2.0 * np.sign(x_arr) * (self.dT(x_arr) - 1.0) / (self.T(x_arr) - x_arr) ** 3
        return out if np.ndim(x) else float(out)

    def u(self, x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
        out = np.empty_like(x_arr)
        inside = (x_arr >= self._knots[0]) & (x_arr <= self._knots[-1])
        out[inside] = self.u0 + self._u_raw(x_arr[inside])
        # beyond the table (|x| ~ 1e6 and larger) u has flattened to its
        # limit up to O(1/x); fall back to the limit values
        out[~inside & (x_arr > 0)] = self.u_at_inf
        out[~inside & (x_arr < 0)] = self.u_at_minus_inf
        out = out.reshape(np.shape(np.atleast_1d(x)))
        return out if np.ndim(x) else float(out[()] if out.shape == () else out[0])

    def duality_residual(self, x):
        """u(x) + u(T(x)) - 1/|x - T(x)|, zero on the graph up to quadrature."""
        x_arr = np.asarray(x, dtype=float)
        tx = self.T(x_arr)
        return self.u(x_arr) + self.u(tx) - 1.0 / np.abs(x_arr - tx)

    # -- effective potential -----------------------------------------------

    def V(self, x, y):
        x_arr, y_arr = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        if np.any(x_arr == y_arr):
            raise ValueError("V is singular on the diagonal x = y")
        return 1.0 / np.abs(x_arr - y_arr) - self.u(x_arr) - self.u(y_arr)

    def V_grid(self, x_axis, y_axis):
        """V on a tensor grid; diagonal handled by the caller's mask."""
        x_axis = np.asarray(x_axis, float)
        y_axis = np.asarray(y_axis, float)
        ux = self.u(x_axis)
        uy = self.u(y_axis)
        diff = np.abs(x_axis[:, None] - y_axis[None, :])
        with np.errstate(divide="ignore"):
            coul = 1.0 / diff
        return coul - ux[:, None] - uy[None, :]

    def gradV(self, x, y):
        x_arr, y_arr = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        s = np.sign(x_arr - y_arr)
        inv2 = 1.0 / (x_arr - y_arr) ** 2
        return np.stack([-s * inv2 - self.du(x_arr), s * inv2 - self.du(y_arr)])

    def hessV(self, x, y):
        """2x2 Hessian of V at (x, y), vectorized over broadcast shapes."""
        x_arr, y_arr = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        c = 2.0 / np.abs(x_arr - y_arr) ** 3
        h = np.empty(x_arr.shape + (2, 2))
        h[..., 0, 0] = c - self.ddu(x_arr)
        h[..., 0, 1] = -c
        h[..., 1, 0] = -c
        h[..., 1, 1] = c - self.ddu(y_arr)
        return h

    def q(self, x):
        """Positive eigenvalue of D2V on the graph (= its trace there)."""
        x_arr = np.asarray(x, dtype=float)
        tx = self.T(x_arr)
        out = 4.0 / np.abs(tx - x_arr) ** 3 - self.ddu(x_arr) - self.ddu(tx)
        return out if np.ndim(x) else float(out)

    def sqrtA(self, x):
        """A(x) = sqrt(D2V(x, T(x))) = D2V(x,T(x)) / sqrt(q(x)) (rank-1 PSD)."""
        x = float(x)
        h = self.hessV(x, float(self.T(x)))
        return h / np.sqrt(self.q(x))


def solve(density: Density1D) -> CoulombOTSolution:
    return CoulombOTSolution(density)


@dataclass(frozen=True)
class DomainH:
    """Invariant bulk domain Omega_H = [T(r_H), T(H)] u [r_H, H] with
    rho([0, r_H]) = rho([H, inf)), its enlargement with H+1, and the
    numeric constant L(H) controlling the construction."""

    H: float
    r_H: float
    omega: tuple  # ((a-, b-), (a+, b+)) the two components, sorted
    omega_p: tuple  # same for Omega_H'
    L: float
    delta_gap: float
    max_ddu: float

    @property
    def components(self):
        return self.omega

    def total_length(self) -> float:
        return sum(b - a for a, b in self.omega)

    def lattice(self, n_per_comp: int = 200, enlarged: bool = False):
        comps = self.omega_p if enlarged else self.omega
        return np.concatenate([np.linspace(a, b, n_per_comp) for a, b in comps])

    def contains(self, x, enlarged: bool = False):
        comps = self.omega_p if enlarged else self.omega
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for a, b in comps:
            out |= (x >= a) & (x <= b)
        return out


def _inner_radius(sol: CoulombOTSolution, h: float) -> float:
    # rho([0, r]) = rho([h, inf))  <=>  F(r) = 3/2 - F(h)
    return float(sol.density.quantile(1.5 - float(sol.density.cdf(h))))


def build_domain(sol: CoulombOTSolution, H: float, lattice_n: int = 400) -> DomainH:
    """Constructs Omega_H, Omega_H' and evaluates L(H) on a lattice.

    L is the max of sup-norms and Lipschitz constants of rho, 1/rho, T,
    1/T', u, q, 1/q and u'' over Omega_H'; Lipschitz constants are taken
    as the sup of difference quotients on the lattice.
    """
    if H <= 1.0:
        raise ValueError("H must exceed 1")
    if float(1.0 - sol.density.cdf(H)) >= 0.25:
        raise ValueError("H too small: rho([H, inf)) must be < 1/4")
    r_H = _inner_radius(sol, H)
    r_Hp = _inner_radius(sol, H + 1.0)
    t_rH, t_H = float(sol.T(r_H)), float(sol.T(H))
    t_rHp, t_Hp = float(sol.T(r_Hp)), float(sol.T(H + 1.0))
    omega = (tuple(sorted((t_rH, t_H))), (r_H, H))
    omega_p = (tuple(sorted((t_rHp, t_Hp))), (r_Hp, H + 1.0))

    xs = np.concatenate([np.linspace(a, b, lattice_n) for a, b in omega_p])
    rho = sol.density.pdf(xs)
    tvals = sol.T(xs)
    tp = sol.dT(xs)
    tpp = sol.ddT(xs)
    uvals = sol.u(xs)
    up = sol.du(xs)
    upp = sol.ddu(xs)
    qvals = sol.q(xs)

    def lip(vals):
        num = np.abs(np.diff(vals))
        den = np.abs(np.diff(xs))
        ok = den > 0
        return float(np.max(num[ok] / den[ok]))

    L = max(
        float(np.max(rho)),
        float(np.max(1.0 / rho)),
        float(np.max(1.0 / tp)),
        float(np.max(np.abs(tvals))), float(np.max(np.abs(tp))), float(np.max(np.abs(tpp))),
        float(np.max(np.abs(uvals))), float(np.max(np.abs(up))), float(np.max(np.abs(upp))),
        float(np.max(qvals)),
        float(np.max(1.0 / qvals)),
        lip(rho),
        lip(upp),
    )
    in_omega = np.concatenate([np.linspace(a, b, lattice_n) for a, b in omega])
    delta_gap = float(np.min(np.abs(sol.T(in_omega) - in_omega)))
    return DomainH(H=float(H), r_H=r_H, omega=omega, omega_p=omega_p, L=L,
                   delta_gap=delta_gap, max_ddu=float(np.max(np.abs(upp))))


def f_ot(sol: CoulombOTSolution, quad_window: float = 200.0) -> dict:
    """F_OT = int rho(x)/|x - T(x)| dx, with the N*int(u rho) cross-check.

    The dual identity F_OT = 2 int u d rho holds for the normalization of u
    implicit in the duality anchor only up to an additive constant; both
    values and their discrepancy are reported rather than asserted equal.
    """
    w = float(quad_window)

    def integrand(x):
        if x == 0.0:
            return 0.0
        return sol.density.pdf(x) / abs(x - sol.T(x))

    val = _support_quad(integrand, sol.density, w)
    dual = _support_quad(lambda x: sol.u(x) * sol.density.pdf(x), sol.density, w)
    return {
        "F_OT": val,
        "dual_value": 2.0 * dual,
        "dual_discrepancy": val - 2.0 * dual,
    }


def _support_quad(integrand, density: Density1D, w: float) -> float:
    """Quadrature over the density support split at 0 and +-w (the
    integrands lose smoothness at the origin and decay polynomially)."""
    lo, hi = density.support
    cuts = [lo]
    for c in (-w, 0.0, w):
        if cuts[-1] < c < hi:
            cuts.append(c)
    cuts.append(hi)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-10, limit=400)
        total += val
    return total


def f_zpo(sol: CoulombOTSolution, quad_window: float = 200.0) -> float:
    """F_ZPO = 1/2 int sqrt(q(x)) rho(x) dx by adaptive quadrature."""

    def integrand(x):
        if x == 0.0:
            return 0.0
        return 0.5 * np.sqrt(max(sol.q(x), 0.0)) * sol.density.pdf(x)

    return _support_quad(integrand, sol.density, float(quad_window))


def f_zpo_probability_quadrature(sol: CoulombOTSolution, n: int = 20000) -> float:
    """Independent route: substitute t = F(x), so that
    F_ZPO = 1/2 int_0^1 sqrt(q(F^{-1}(t))) dt, and integrate on a uniform
    midpoint lattice in t.  Used as the second oracle quadrature."""
    t = (np.arange(n) + 0.5) / n
    xs = sol.density.quantile(t)
    xs = xs[xs != 0.0]
    return float(0.5 * np.mean(np.sqrt(sol.q(xs))))


def f_ot_on_domain(sol: CoulombOTSolution, dom: DomainH) -> float:
    total = 0.0
    for a, b in dom.omega:
        val, _ = integrate.quad(lambda x: sol.density.pdf(x) / abs(x - sol.T(x)),
                                a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
        total += val
    return total


def f_zpo_on_domain(sol: CoulombOTSolution, dom: DomainH) -> float:
    """1/2 int_{Omega_H} sqrt(q) rho, the main-plan energy target."""
    total = 0.0
    for a, b in dom.omega:
        val, _ = integrate.quad(lambda x: 0.5 * np.sqrt(sol.q(x)) * sol.density.pdf(x),
                                a, b, epsabs=1e-12, epsrel=1e-10, limit=200)
        total += val
    return total


def _dist_to_graph(sol: CoulombOTSolution, px: float, py: float, x_seed: float) -> float:
    """Distance from (px, py) to graph(T) by local minimization in x."""

    def d2(x):
        return (x - px) ** 2 + (sol.T(x) - py) ** 2

    lo, hi = x_seed - 0.5, x_seed + 0.5
    if lo <= 0 <= hi:  # stay on the seed's half-line
        lo, hi = (1e-6, hi) if x_seed > 0 else (lo, -1e-6)
    res = optimize.minimize_scalar(d2, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    return float(np.sqrt(res.fun))


def quadratic_growth_check(sol: CoulombOTSolution, dom: DomainH,
                           eps0: float = 0.25, n_base: int = 40,
                           offsets=None) -> dict:
    """Samples V near graph(T) and verifies V <= C dist(., graph)^2.

    Returns the smallest admissible constant C over the sample, the probe
    radius eps0, and the on-graph Taylor ratio V/s^2 -> q/2 at offset s
    along the unit normal.
    """
    if offsets is None:
        offsets = np.geomspace(1e-4, eps0, 12)
    ratios = []
    for a, b in dom.omega:
        for x in np.linspace(a + 1e-3, b - 1e-3, n_base):
            tx = float(sol.T(x))
            tp = float(sol.dT(x))
            nrm = np.array([-tp, 1.0]) / np.hypot(tp, 1.0)
            for s in offsets:
                for sgn in (+1.0, -1.0):
                    px, py = x + sgn * s * nrm[0], tx + sgn * s * nrm[1]
                    if px == py:
                        continue
                    v = float(sol.V(px, py))
                    dist = _dist_to_graph(sol, px, py, x)
                    if dist > eps0 or dist < 1e-14:
                        continue  # outside the probe tube: excluded from fit
                    ratios.append(v / dist**2)
    ratios = np.asarray(ratios)
    if ratios.size == 0 or not np.all(np.isfinite(ratios)):
        raise FloatingPointError("quadratic growth fit failed (no finite ratios)")
    return {
        "C": float(np.max(ratios)),
        "eps0": float(eps0),
        "min_ratio": float(np.min(ratios)),
        "n_samples": int(ratios.size),
    }
