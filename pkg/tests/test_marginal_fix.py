"""Remainder plan, deconvolution exactness/energy bounds, assembly."""

import math

import numpy as np
import pytest

from coulomb_zpo import coulomb_ot, marginal_fix, recovery
from coulomb_zpo.density import make_power_tail
from coulomb_zpo.gridfield import GridField2D


@pytest.fixture(scope="module")
def assembled():
    d = make_power_tail(2.0, box=7.0)
    sol = coulomb_ot.solve(d)
    dom = coulomb_ot.build_domain(sol, 4.0)
    eps = 1e-3
    s = abs(math.log(eps))
    sch = recovery.schedule(eps, 4.0, {
        "N": 5.0 / s**1.25, "beta": 0.07 / (math.sqrt(eps) * s**3),
        "delta": 0.045 / (eps**0.125 / s), "tau": 0.010 / s ** (-1.0 / 3.0)})
    part = recovery.build_partition(sol, dom, sch.delta)
    mp = recovery.build_main_plan(sol, part, sch, -7.0, 7.0, 384)
    rem = marginal_fix.remainder_plan(mp, sol)
    dp = marginal_fix.deconvolve(rem.pi0, eps)
    rf = marginal_fix.assemble_recovery(mp, rem, dp, sol)
    return sol, dom, sch, mp, rem, dp, rf


def test_bump_marginal_properties():
    xs = np.linspace(-1, 1, 400001)
    h = xs[1] - xs[0]
    th = marginal_fix.bump_theta_1d(xs)
    assert th.sum() * h == pytest.approx(1.0, abs=1e-8)
    # Fisher kinetic energy of the bump marginal is exactly 7/5
    d1 = np.gradient(th, h)
    ke = float((d1[1:-1] ** 2 / (8 * np.maximum(th[1:-1], 1e-300))).sum() * h)
    assert ke == pytest.approx(marginal_fix.bump_ke_constant(), rel=1e-3)


def test_bump_taps_normalized():
    taps, t1 = marginal_fix.bump_taps_2d(1e-2, 0.02)
    assert taps.shape[0] % 2 == 1
    assert taps.sum() == pytest.approx(1.0, abs=1e-14)
    assert t1.sum() == pytest.approx(1.0, abs=1e-14)


def test_deconvolution_marginal_exactness_random():
    rng = np.random.default_rng(11)
    for _ in range(20):
        vals = rng.uniform(0.0, 1.0, (8, 8))
        pi0 = GridField2D(0.0, 0.0, 0.125, 0.125, vals)
        dp = marginal_fix.deconvolve(pi0, eps=0.02)
        m1 = dp.pi_tilde.values.sum(axis=1)
        m2 = dp.pi_tilde.values.sum(axis=0)
        assert np.max(np.abs(m1 - vals.sum(axis=1))) < 1e-12
        assert np.max(np.abs(m2 - vals.sum(axis=0))) < 1e-12
        assert np.min(dp.pi_tilde.values) >= -1e-16


def test_deconvolution_support_growth():
    vals = np.zeros((32, 32))
    vals[12:20, 12:20] = 1.0
    pi0 = GridField2D(0.0, 0.0, 0.05, 0.05, vals)
    eps = 0.01
    dp = marginal_fix.deconvolve(pi0, eps)
    growth = dp.support_growth(pi0)
    assert growth <= 2.0 * eps**0.25 + 2 * 0.05


def test_deconvolution_product_fixed_point():
    # the factorization argument needs a product kernel; with product taps
    # the product plan is an exact fixed point of the deconvolution
    rng = np.random.default_rng(3)
    s1 = rng.uniform(0.1, 1.0, 16)
    s2 = rng.uniform(0.1, 1.0, 16)
    prod = np.outer(s1, s2) / s2.sum()
    pi0 = GridField2D(0.0, 0.0, 0.1, 0.1, prod)
    dp = marginal_fix.deconvolve(pi0, eps=0.01)
    # replace the radial taps by their product counterpart
    t1 = dp.taps_1d
    taps_prod = np.outer(t1, t1)
    from coulomb_zpo.gridfield import convolve2d

    k = t1.size // 2
    pi_eps = convolve2d(pi0, taps_prod)
    n = 16
    s1_eps = np.convolve(prod.sum(axis=1), t1, mode="full")
    s2_eps = np.convolve(prod.sum(axis=0), t1, mode="full")

    def contraction(sv, sv_eps):
        d = np.zeros((n, n + 2 * k))
        idx = np.arange(n)
        for o in range(2 * k + 1):
            d[idx, idx + o] = sv * t1[o]
        good = sv_eps > 1e-300
        d[:, good] /= sv_eps[good]
        d[:, ~good] = 0.0
        return d

    tilde = contraction(prod.sum(axis=1), s1_eps) @ pi_eps.values @ contraction(
        prod.sum(axis=0), s2_eps).T
    assert np.max(np.abs(tilde - prod)) < 1e-10


def test_remainder_masses_and_positivity(assembled):
    sol, dom, sch, mp, rem, dp, rf = assembled
    assert rem.sigma1.mass() == pytest.approx(rem.sigma2.mass(), rel=1e-9)
    assert np.min(rem.sigma1.values) >= 0 and np.min(rem.sigma2.values) >= 0
    assert rem.clipped_mass < 1e-8
    rho_grid_mass = float(sol.density.pdf(mp.gammabar.xs).sum() * mp.gammabar.hx)
    assert rem.mass == pytest.approx(rho_grid_mass - mp.mass, abs=1e-9)


def test_pi0_marginals_exact(assembled):
    sol, dom, sch, mp, rem, dp, rf = assembled
    h = rem.pi0.hx
    m1 = rem.pi0.values.sum(axis=1) * h
    m2 = rem.pi0.values.sum(axis=0) * h
    assert np.max(np.abs(m1 - rem.sigma1.values)) < 1e-10
    assert np.max(np.abs(m2 - rem.sigma2.values)) < 1e-10


def test_pi0_near_graph_support(assembled):
    # support condition for the deconvolution estimate: pi0 sits close to
    # graph(T), uniformly on the bulk
    sol, dom, sch, mp, rem, dp, rf = assembled
    assert rem.sup_s_minus_id < dom.delta_gap  # far below the diagonal gap
    assert rem.pe < 5e-4
    # cube-root shape of the sup bound (BJR-style): sup^3 <= C w2^2 / tau
    c_bjr = rem.sup_s_minus_id**3 * sch.tau / rem.w2sq
    assert c_bjr < 10.0


def test_deconvolved_plan_marginals_match_remainders(assembled):
    sol, dom, sch, mp, rem, dp, rf = assembled
    h = dp.pi_tilde.hx
    m1 = dp.pi_tilde.values.sum(axis=1) * h
    m2 = dp.pi_tilde.values.sum(axis=0) * h
    assert np.max(np.abs(m1 - rem.sigma1.values)) < 1e-12
    assert np.max(np.abs(m2 - rem.sigma2.values)) < 1e-12


def test_deconvolution_ke_bound(assembled):
    sol, dom, sch, mp, rem, dp, rf = assembled
    eps = sch.eps
    ke_tilde = dp.pi_tilde.kinetic_energy()
    ke_s1 = rem.sigma1.kinetic_energy()
    ke_s2 = rem.sigma2.kinetic_energy()
    c_meas = (ke_tilde - ke_s1 - ke_s2) * math.sqrt(eps) / rem.mass
    assert c_meas <= 10.0 * marginal_fix.bump_ke_constant()


def test_recovery_field_marginals(assembled):
    sol, dom, sch, mp, rem, dp, rf = assembled
    assert rf.marginal_residual_x < 1e-3
    assert rf.marginal_residual_y < 1e-3
    assert np.min(rf.psi_sq.values) >= 0


def test_recovery_energy_sandwich(assembled):
    # subadditivity sandwich: E(main) <= E(total) <= E(main) + E(remainder)
    sol, dom, sch, mp, rem, dp, rf = assembled
    e_main = rf.main_energy["E"]
    e_rem = rf.remainder_energy["E"]
    e_tot = rf.energy["E"]
    assert e_tot <= e_main + e_rem + 1e-10
    assert e_tot >= e_main - 1e-10


def test_pe_bound_check_record(assembled):
    sol, dom, sch, mp, rem, dp, rf = assembled
    rec = marginal_fix.deconvolution_pe_bound_check(rem.pi0, dp, sol)
    assert rec["lhs"] >= 0
    assert rec["C_joint"] < 10.0


def test_pe_bound_sqrt_eps_slope_on_graph_plan():
    # a plan supported exactly on graph(T) has PE ~ 0; the deconvolved
    # plan pays ~ C sqrt(eps) ||pi0||_1, i.e. log-log slope 1/2 in eps
    d = make_power_tail(2.0, box=7.0)
    sol = coulomb_ot.solve(d)
    n = 256
    xs = np.linspace(-7.0, 7.0, n)
    h = xs[1] - xs[0]
    vals = np.zeros((n, n))
    sel = (np.abs(xs) > 0.7) & (np.abs(xs) < 4.0)
    for i in np.nonzero(sel)[0]:
        j = int(np.clip(np.searchsorted(xs, float(sol.T(xs[i]))), 0, n - 1))
        vals[i, j] = 1.0 / (h * h) * 0.01
    pi0 = GridField2D(-7.0, -7.0, h, h, vals)
    pes = []
    eps_list = [1e-2, 1e-3, 1e-4]
    for eps in eps_list:
        dp = marginal_fix.deconvolve(pi0, eps)
        rec = marginal_fix.deconvolution_pe_bound_check(pi0, dp, sol)
        pes.append(rec["pe_tilde"])
    slope = np.polyfit(np.log(eps_list), np.log(pes), 1)[0]
    assert abs(slope - 0.5) <= 0.1


def test_pe_bound_linearity_in_mass():
    d = make_power_tail(2.0, box=7.0)
    sol = coulomb_ot.solve(d)
    n = 128
    xs = np.linspace(-7.0, 7.0, n)
    h = xs[1] - xs[0]
    vals = np.zeros((n, n))
    vals[30, 90] = 1.0
    vals[40, 80] = 0.5
    pi0 = GridField2D(-7.0, -7.0, h, h, vals)
    pi0_double = GridField2D(-7.0, -7.0, h, h, 2.0 * vals)
    eps = 1e-3
    r1 = marginal_fix.deconvolution_pe_bound_check(pi0, marginal_fix.deconvolve(pi0, eps), sol)
    r2 = marginal_fix.deconvolution_pe_bound_check(pi0_double, marginal_fix.deconvolve(pi0_double, eps), sol)
    assert r2["pe_tilde"] == pytest.approx(2.0 * r1["pe_tilde"], rel=1e-9)
    assert r2["mass"] == pytest.approx(2.0 * r1["mass"], rel=1e-12)


def test_full_plan_deconvolution_pays_more(assembled):
    # deconvolving the whole main plan (instead of only the remainder)
    # costs an order-one PE overhead relative to the remainder route
    sol, dom, sch, mp, rem, dp, rf = assembled
    eps = sch.eps
    dp_full = marginal_fix.deconvolve(mp.gammabar, eps)
    rec_full = marginal_fix.deconvolution_pe_bound_check(mp.gammabar, dp_full, sol)
    rec_rem = marginal_fix.deconvolution_pe_bound_check(rem.pi0, dp, sol)
    overhead_full = rec_full["pe_tilde"] - rec_full["pe_pi0"]
    overhead_rem = rec_rem["pe_tilde"] - rec_rem["pe_pi0"]
    assert overhead_full > 3.0 * abs(overhead_rem)
