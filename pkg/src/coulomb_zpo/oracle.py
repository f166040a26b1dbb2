"""Independent variational oracles.

* ground_state: smallest eigenpair of H = -sqrt(eps) Lap/2 + V/sqrt(eps)
  on a Dirichlet grid, by shifted inverse iteration with matrix-free
  Jacobi-preconditioned conjugate-gradient solves and a deterministic
  all-ones start.  The Gamma-limit prediction for a potential vanishing
  on a curve is min over the zero set of tr(sqrt(D2V))/2, i.e.
  min_x sqrt(q(x))/2 on the in-domain part of the optimal graph.

* constrained_min: minimize E_eps over plans gamma >= 0 with prescribed
  row/column sums on a coarse grid.  The energy is the quadratic form
  <s, H s> in s = sqrt(gamma), so the solver runs an augmented
  Lagrangian in s (L-BFGS inner loops), finishes with multiplicative
  marginal scaling (IPF) to push the feasibility residual to ~1e-10,
  and reports a mass-weighted KKT stationarity residual: at an interior
  optimum the gamma-gradient (Hs)/s splits as alpha_i + beta_j on the
  support.

* delta_recovery: the truncated-Gaussian point-concentration family
  f = (exp(-x^T A x / 2 sqrt(eps)) - e^{-N})_+ with A = sqrt(D2V(0)) +
  sqrt(eta) Id, N = -log(eta), evaluated by radial quadrature; its
  scaled energy converges to tr(sqrt(D2V(0)))/2 (value 1/2 for
  D2V = diag(1, 0)).

* oscillator_check: the harmonic-oscillator lower bound
  int eps|grad psi|^2 + |Ax|^2 psi^2 >= tr(A) sqrt(eps)/(1 + C sqrt(eps))
  with C = sqrt(2)/(r^2 lambda_min), tested on grid fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .coulomb_ot import CoulombOTSolution

__all__ = [
    "potential_grid",
    "GroundStateResult",
    "ground_state",
    "ConstrainedResult",
    "constrained_min",
    "delta_recovery",
    "h_of_n",
    "oscillator_check",
]


def potential_grid(sol: CoulombOTSolution, x0: float, x1: float, n: int):
    """V on an n x n grid with the Coulomb part capped at the diagonal
    band 1/|x-y| -> 1/max(|x-y|, 2h): a finite wall instead of a hole, so
    the operator stays well-defined without opening a channel."""
    xs = np.linspace(x0, x1, n)
    h = xs[1] - xs[0]
    u = sol.u(xs)
    diff = np.abs(xs[:, None] - xs[None, :])
    v = 1.0 / np.maximum(diff, 2.0 * h) - u[:, None] - u[None, :]
    return xs, h, np.maximum(v, 0.0)


def _apply_h(s, v_scaled, eps_half_h2):
    """H s with H = -sqrt(eps)/2 Lap_h + diag(V/sqrt(eps)) (Dirichlet)."""
    out = (4.0 * s) * eps_half_h2
    out[1:, :] -= eps_half_h2 * s[:-1, :]
    out[:-1, :] -= eps_half_h2 * s[1:, :]
    out[:, 1:] -= eps_half_h2 * s[:, :-1]
    out[:, :-1] -= eps_half_h2 * s[:, 1:]
    out += v_scaled * s
    return out


def _cg(apply_a, b, x0, precond, tol, max_iter):
    x = x0.copy()
    r = b - apply_a(x)
    z = r * precond
    p = z.copy()
    rz = float((r * z).sum())
    b_norm = math.sqrt(float((b * b).sum())) or 1.0
    for _ in range(max_iter):
        ap = apply_a(p)
        pap = float((p * ap).sum())
        if pap <= 0:
            return x, False  # indefinite shift; caller backs off
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if math.sqrt(float((r * r).sum())) <= tol * b_norm:
            return x, True
        z = r * precond
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, True


@dataclass
class GroundStateResult:
    eigenvalue: float
    eigenfield: np.ndarray
    xs: np.ndarray
    h: float
    eps: float
    predicted_limit: float | None
    residual: float
    iterations: int

    def mass_above(self, v_values: np.ndarray, level: float) -> float:
        psi2 = self.eigenfield**2
        return float(psi2[v_values > level].sum() * self.h * self.h)

    def markov_bound(self, level: float) -> float:
        """Provable concentration bound: mass(psi^2, {V > t}) <=
        sqrt(eps) E / t (Chebyshev on the potential term)."""
        return math.sqrt(self.eps) * self.eigenvalue / level


def ground_state(v_values: np.ndarray, eps: float, h: float,
                 xs: np.ndarray | None = None,
                 predicted_limit: float | None = None,
                 tol: float = 1e-7, max_outer: int = 60) -> GroundStateResult:
    """Smallest eigenpair by shifted inverse iteration (deterministic)."""
    n = v_values.shape[0]
    v_scaled = v_values / math.sqrt(eps)
    eps_half_h2 = math.sqrt(eps) / (2.0 * h * h)
    precond = 1.0 / (4.0 * eps_half_h2 + v_scaled)

    v = np.ones_like(v_values)
    v /= math.sqrt(float((v * v).sum()) * h * h)

    def rayleigh(s):
        return float((s * _apply_h(s, v_scaled, eps_half_h2)).sum() * h * h)

    lam = rayleigh(v)
    shift = 0.0
    resid = math.inf
    it = 0
    for it in range(1, max_outer + 1):
        apply_shifted = lambda s: _apply_h(s, v_scaled, eps_half_h2) - shift * s
        w, ok = _cg(apply_shifted, v, v / max(lam - shift, 1e-30), precond,
                    tol=1e-8, max_iter=600)
        if not ok:
            shift = 0.5 * shift  # invalid (too aggressive) shift
            continue
        v = w / math.sqrt(float((w * w).sum()) * h * h)
        lam = rayleigh(v)
        hv = _apply_h(v, v_scaled, eps_half_h2)
        resid = math.sqrt(float(((hv - lam * v) ** 2).sum()) * h * h)
        if resid <= tol * max(lam, 1e-30):
            break
        # approach the eigenvalue from below; keeps H - shift positive
        shift = max(0.0, lam * (1.0 - max(0.02, resid / max(lam, 1e-30))))
    return GroundStateResult(eigenvalue=lam, eigenfield=v,
                             xs=xs if xs is not None else np.arange(n) * h,
                             h=h, eps=eps, predicted_limit=predicted_limit,
                             residual=resid, iterations=it)


def predicted_gamma_limit(sol: CoulombOTSolution, x0: float, x1: float,
                          n_lattice: int = 4000) -> float:
    """min over the in-domain graph of sqrt(q)/2, on a fine lattice."""
    lo, hi = sol.density.support
    a = max(x0, lo + 1e-9)
    b = min(x1, hi - 1e-9)
    xs = np.linspace(a + 1e-6, b - 1e-6, n_lattice)
    xs = xs[np.abs(xs) > 1e-4]
    t = sol.T(xs)
    keep = (t >= x0) & (t <= x1)
    q = sol.q(xs[keep])
    return float(0.5 * np.sqrt(np.min(q)))


@dataclass
class ConstrainedResult:
    plan: np.ndarray
    energy: float
    kkt_residual: float
    marginal_residual: float
    iterations: int
    h: float


def _marginals(gamma, h):
    return gamma.sum(axis=1) * h, gamma.sum(axis=0) * h


def constrained_min(v_values: np.ndarray, rho_row: np.ndarray,
                    rho_col: np.ndarray, eps: float, h: float,
                    init: np.ndarray | None = None,
                    outer_iters: int = 14) -> ConstrainedResult:
    """Minimize E_eps(gamma) over gamma >= 0 with row sums rho_row and
    column sums rho_col (both times h).  Coarse grids only (n <= 64)."""
    n = v_values.shape[0]
    if n > 64:
        raise ValueError("constrained oracle is restricted to n <= 64")
    v_scaled = v_values / math.sqrt(eps)
    eps_half_h2 = math.sqrt(eps) / (2.0 * h * h)

    if init is None:
        gamma0 = np.outer(rho_row, rho_col) / rho_col.sum()
        gamma0 /= gamma0.sum() * h * h / (rho_row.sum() * h)
    else:
        gamma0 = np.maximum(init, 0.0)
    s = np.sqrt(np.maximum(gamma0, 1e-14))

    lam_r = np.zeros(n)
    lam_c = np.zeros(n)
    mu = 10.0

    def ipf(gamma, rounds=80):
        for _ in range(rounds):
            r = gamma.sum(axis=1) * h
            gamma *= (rho_row / np.maximum(r, 1e-300))[:, None]
            c = gamma.sum(axis=0) * h
            gamma *= (rho_col / np.maximum(c, 1e-300))[None, :]
        return gamma

    def pack(s):
        return s.ravel()

    it_total = 0
    for _ in range(outer_iters):
        def objective(flat):
            s2 = flat.reshape(n, n)
            hs = _apply_h(s2, v_scaled, eps_half_h2)
            energy = float((s2 * hs).sum() * h * h)
            g = s2 * s2
            dr = g.sum(axis=1) * h - rho_row
            dc = g.sum(axis=0) * h - rho_col
            val = (energy + float(lam_r @ dr) + float(lam_c @ dc)
                   + 0.5 * mu * float((dr * dr).sum() + (dc * dc).sum()))
            grad = 2.0 * hs * h * h
            grad += 2.0 * s2 * ((lam_r + mu * dr)[:, None] * h)
            grad += 2.0 * s2 * ((lam_c + mu * dc)[None, :] * h)
            return val, grad.ravel()

        res = optimize.minimize(objective, pack(s), jac=True, method="L-BFGS-B",
                                options={"maxiter": 400, "ftol": 1e-14,
                                         "gtol": 1e-10})
        s = res.x.reshape(n, n)
        it_total += res.nit
        g = s * s
        dr = g.sum(axis=1) * h - rho_row
        dc = g.sum(axis=0) * h - rho_col
        lam_r += mu * dr
        lam_c += mu * dc
        feas = max(np.abs(dr).max(), np.abs(dc).max())
        if feas < 1e-11:
            break
        mu = min(mu * 2.5, 1e7)

    gamma = ipf(s * s)
    s = np.sqrt(gamma)
    hs = _apply_h(s, v_scaled, eps_half_h2)
    energy = float((s * hs).sum() * h * h)

    # weighted KKT: fit (Hs/s) ~ alpha_i + beta_j on the support, weighted
    # by gamma mass; the reported residual is relative to the gradient rms
    grad_gamma = np.where(s > 1e-12, hs / np.maximum(s, 1e-300), 0.0)
    w = gamma / gamma.sum()
    alpha = np.zeros(n)
    beta = np.zeros(n)
    for _ in range(600):
        alpha = ((grad_gamma - beta[None, :]) * w).sum(axis=1) / np.maximum(w.sum(axis=1), 1e-300)
        beta_new = ((grad_gamma - alpha[:, None]) * w).sum(axis=0) / np.maximum(w.sum(axis=0), 1e-300)
        if np.max(np.abs(beta_new - beta)) < 1e-14:
            beta = beta_new
            break
        beta = beta_new
    resid_field = grad_gamma - alpha[:, None] - beta[None, :]
    kkt = math.sqrt(float((w * resid_field**2).sum()))
    scale = math.sqrt(float((w * grad_gamma**2).sum()))
    kkt_rel = kkt / max(scale, 1e-300)

    r, c = _marginals(gamma, h)
    marg_res = float(max(np.abs(r - rho_row).max(), np.abs(c - rho_col).max()))
    return ConstrainedResult(plan=gamma, energy=energy, kkt_residual=kkt_rel,
                             marginal_residual=marg_res, iterations=it_total, h=h)


# -- point-concentration recovery family ------------------------------------


def _radial_quads(N: float):
    """Radial integrals over the ball |z| < sqrt(2N) in R^2 for the
    truncated-profile weights (e^{-r^2/2} - e^{-N})_+^2 and friends."""
    rmax = math.sqrt(2.0 * N)
    en = math.exp(-N)

    def q(f):
        val, _ = integrate.quad(lambda r: f(r) * 2.0 * math.pi * r, 0.0, rmax,
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        return val

    f_sq = lambda r: (math.exp(-r * r / 2.0) - en) ** 2
    i0 = q(f_sq)
    k2 = q(lambda r: r * r * f_sq(r))
    j2 = q(lambda r: r * r * math.exp(-r * r))
    return i0, j2, k2


def h_of_n(N: float, d: int = 2) -> float:
    """Normalized oscillator ratio of the truncated-Gaussian family; tends
    to 1 as the truncation level N grows."""
    rmax = math.sqrt(2.0 * N)
    en = math.exp(-N)

    def sphere_quad(f):
        if d == 2:
            val, _ = integrate.quad(lambda r: f(r) * 2 * math.pi * r, 0, rmax,
                                    epsabs=1e-14, epsrel=1e-12, limit=200)
        elif d == 1:
            val, _ = integrate.quad(f, -rmax, rmax, epsabs=1e-14, epsrel=1e-12)
        else:
            raise ValueError("d must be 1 or 2")
        return val

    num = sphere_quad(lambda r: r * r * (2 * math.exp(-r * r)
                                         - 2 * math.exp(-r * r / 2.0 - N)
                                         + math.exp(-2 * N)))
    den = sphere_quad(lambda r: (math.exp(-r * r) - 2 * math.exp(-r * r / 2.0 - N)
                                 + math.exp(-2 * N)))
    return num / (d * den)


def delta_recovery(d2v0: np.ndarray, eps_sequence, eta_rule=None,
                   v_local=None) -> list[dict]:
    """Energy trace of the concentration family against tr(sqrt(D2V(0)))/2.

    For quadratic potentials everything reduces to radial quadratures in
    the whitened variable z = sqrt(A) x / eps^{1/4}; a general twice
    differentiable v_local(x, y) >= 0 with v(0) = 0 is integrated by a
    tensor Gauss rule over the concentration ellipse.
    """
    d2v0 = np.asarray(d2v0, dtype=float)
    evals, evecs = np.linalg.eigh(d2v0)
    evals = np.maximum(evals, 0.0)
    sqrt_d2v = (evecs * np.sqrt(evals)) @ evecs.T
    target = 0.5 * float(np.sqrt(evals).sum())
    if eta_rule is None:
        eta_rule = lambda eps: eps
    out = []
    for eps in eps_sequence:
        eta = eta_rule(eps)
        n_level = -math.log(eta)
        a_mat = sqrt_d2v + math.sqrt(eta) * np.eye(2)
        tr_a = float(np.trace(a_mat))
        if v_local is None:
            i0, j2, k2 = _radial_quads(n_level)
            m_mat = np.linalg.inv(a_mat) @ d2v0  # trace-equivalent to A^-1/2 D2V A^-1/2
            tr_m = float(np.trace(m_mat))
            energy = (tr_a * j2 + tr_m * k2) / (4.0 * i0)
        else:
            energy = _delta_energy_general(a_mat, n_level, eps, v_local)
        out.append({"eps": eps, "eta": eta, "N": n_level, "energy": energy,
                    "target": target, "h_of_N": h_of_n(n_level)})
    return out


def _delta_energy_general(a_mat, n_level, eps, v_local, n_nodes=220):
    """E_eps of the truncated family for a general local potential, by
    tensor Gauss quadrature in the whitened coordinates z = sqrt(A) x /
    eps^{1/4}:  E = [int z^T A z e^{-r^2}/2 + eps^{-1/2} int V f^2] /
    int f^2 over the ball r^2 < 2N."""
    evals, evecs = np.linalg.eigh(a_mat)
    rmax = math.sqrt(2.0 * n_level)
    gl_x, gl_w = np.polynomial.legendre.leggauss(n_nodes)
    zz1, zz2 = np.meshgrid(rmax * gl_x, rmax * gl_x, indexing="ij")
    ww = np.outer(gl_w, gl_w) * rmax * rmax
    r2 = zz1**2 + zz2**2
    inside = r2 < 2.0 * n_level
    en = math.exp(-n_level)
    f2 = np.where(inside, np.maximum(np.exp(-r2 / 2.0) - en, 0.0) ** 2, 0.0)
    # x = eps^{1/4} A^{-1/2} z, with z expressed in the eigenbasis of A
    scale = eps**0.25 / np.sqrt(evals)
    x1 = evecs[0, 0] * scale[0] * zz1 + evecs[0, 1] * scale[1] * zz2
    x2 = evecs[1, 0] * scale[0] * zz1 + evecs[1, 1] * scale[1] * zz2
    v_vals = v_local(x1, x2)
    za_z = evals[0] * zz1**2 + evals[1] * zz2**2
    ke = 0.5 * float((np.where(inside, za_z * np.exp(-r2), 0.0) * ww).sum())
    pe = float((v_vals * f2 * ww).sum()) / math.sqrt(eps)
    norm = float((f2 * ww).sum())
    return (ke + pe) / norm


def oscillator_check(a_mat: np.ndarray, eps: float, x0: float, x1: float,
                     n: int, fields, r: float) -> dict:
    """Evaluates int(eps |grad psi|^2 + |Ax|^2 psi^2) / int psi^2 for the
    given grid fields and compares with tr(A) sqrt(eps)/(1 + C sqrt(eps)),
    C = sqrt(2)/(r^2 lambda_min)."""
    a_mat = np.asarray(a_mat, dtype=float)
    xs = np.linspace(x0, x1, n)
    h = xs[1] - xs[0]
    xg, yg = np.meshgrid(xs, xs, indexing="ij")
    ax = a_mat[0, 0] * xg + a_mat[0, 1] * yg
    ay = a_mat[1, 0] * xg + a_mat[1, 1] * yg
    ax2 = ax * ax + ay * ay
    lam_min = float(np.linalg.eigvalsh(a_mat).min())
    c_bound = math.sqrt(2.0) / (r * r * lam_min)
    bound = float(np.trace(a_mat)) * math.sqrt(eps) / (1.0 + c_bound * math.sqrt(eps))
    out = []
    for psi in fields:
        gx, gy = np.gradient(psi, h, h)
        num = float(((eps * (gx * gx + gy * gy) + ax2 * psi * psi)).sum() * h * h)
        den = float((psi * psi).sum() * h * h)
        out.append(num / den)
    return {"ratios": out, "bound": bound, "C": c_bound,
            "tr_sqrt_eps": float(np.trace(a_mat)) * math.sqrt(eps)}
