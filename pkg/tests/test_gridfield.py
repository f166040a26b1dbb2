"""Grid fields: energies, convolution, 1D Wasserstein, serialization."""

import math

import numpy as np
import pytest

from coulomb_zpo import trunc_gauss as tg
from coulomb_zpo.gridfield import GridField1D, GridField2D, convolve2d, e_eps, w2_1d


def make_grid(x0, x1, n):
    xs = np.linspace(x0, x1, n)
    return xs, xs[1] - xs[0]


def sample_kernel(k, x0, x1, n):
    xs, h = make_grid(x0, x1, n)
    xg, yg = np.meshgrid(xs, xs, indexing="ij")
    return GridField2D(x0, x0, h, h, k(xg, yg))


def test_mass_and_marginals_consistency():
    rng = np.random.default_rng(0)
    f = GridField2D(-1, -2, 0.1, 0.2, rng.uniform(0, 1, (30, 40)))
    assert f.marginal_x().mass() == pytest.approx(f.mass(), abs=1e-12)
    assert f.marginal_y().mass() == pytest.approx(f.mass(), abs=1e-12)


def test_ke_gaussian_trace_formula():
    # KE(Gamma_{M,inf}) = tr M / 4 on a fine grid
    k = tg.TruncatedGaussian(M=np.diag([2.0, 1.0]), N=np.inf)
    f = sample_kernel(k, -6.0, 6.0, 1200)
    assert f.kinetic_energy() == pytest.approx(3.0 / 4.0, rel=1e-4)


def test_e_eps_zero_potential():
    k = tg.TruncatedGaussian(M=np.eye(2), N=np.inf)
    f = sample_kernel(k, -5.0, 5.0, 300)
    rec = e_eps(f, np.zeros_like(f.values), eps=0.1)
    assert rec["PE"] == 0.0
    assert rec["E"] == pytest.approx(math.sqrt(0.1) * rec["KE"])


def test_e_eps_equipartition_quadratic():
    # elongated kernel against its own quadratic potential: the two scaled
    # energy halves agree within 5 percent
    eps, beta, q = 4e-4, 0.8, 1.0
    v = np.array([1.0, -1.0]) / math.sqrt(2)
    A = q * np.outer(v, v)
    k = tg.make_kernel(A, eps=eps, beta=beta, N=np.inf)
    f = sample_kernel(k, -3.0, 3.0, 720)
    xg, yg = np.meshgrid(f.xs, f.ys, indexing="ij")
    w = (xg * v[0] + yg * v[1])
    vgrid = 0.5 * (q * w) ** 2
    rec = e_eps(f, vgrid, eps=eps)
    ke_side = math.sqrt(eps) * rec["KE"]
    pe_side = rec["PE"] / math.sqrt(eps)
    assert abs(ke_side - pe_side) / rec["E"] < 0.05


def test_e_eps_no_nan_on_vanishing_density():
    vals = np.zeros((20, 20))
    vals[5:10, 5:10] = 1.0
    f = GridField2D(0, 0, 0.1, 0.1, vals)
    rec = e_eps(f, np.ones_like(vals), eps=1.0)
    assert np.isfinite(rec["KE"]) and np.isfinite(rec["E"])


def test_convolve_delta_identity():
    rng = np.random.default_rng(1)
    f = GridField2D(0, 0, 0.1, 0.1, rng.uniform(0, 1, (25, 25)))
    taps = np.zeros((3, 3))
    taps[1, 1] = 1.0
    g = convolve2d(f, taps)
    assert np.allclose(g.values[1:-1, 1:-1], f.values, atol=1e-15)
    assert g.x0 == pytest.approx(f.x0 - f.hx)


def test_convolve_mass_preservation():
    rng = np.random.default_rng(2)
    f = GridField2D(0, 0, 0.05, 0.05, rng.uniform(0, 1, (40, 40)))
    t = np.arange(-3, 4, dtype=float)
    taps = np.outer(np.exp(-t**2), np.exp(-t**2))
    g = convolve2d(f, taps)
    assert g.mass() == pytest.approx(f.mass(), abs=1e-10 * f.mass())


def test_marginal_of_convolution():
    # marginal of the 2D convolution = 1D convolution of the marginal with
    # the tap column sums
    rng = np.random.default_rng(3)
    f = GridField2D(0, 0, 0.1, 0.1, rng.uniform(0, 1, (30, 30)))
    t = np.arange(-2, 3, dtype=float)
    taps = np.outer(np.exp(-t**2), np.exp(-0.5 * t**2))
    taps /= taps.sum()
    g = convolve2d(f, taps)
    mx = f.marginal_x().values
    tx = taps.sum(axis=1)
    direct = np.convolve(mx, tx, mode="full")
    assert np.max(np.abs(g.marginal_x().values - direct)) < 1e-8


def test_w2_translation():
    xs, h = make_grid(-5, 5, 400)
    pdf = np.exp(-(xs**2))
    pdf /= pdf.sum() * h
    mu = GridField1D(-5, h, pdf)
    shift = 17 * h  # exact grid shift
    nu = GridField1D(-5 + shift, h, pdf)
    rec = w2_1d(mu, nu)
    assert math.sqrt(rec["w2sq"]) == pytest.approx(shift, rel=1e-10)


def test_w2_dilation():
    # W2^2 = (lam-1)^2 Var(mu) for a centered dilation of a probability
    lam = 1.5
    xs, h = make_grid(-8, 8, 3201)
    pdf = np.exp(-(xs**2) / 2)
    pdf /= pdf.sum() * h
    mu = GridField1D(-8, h, pdf)
    ys = xs * lam
    nu = GridField1D(ys[0], ys[1] - ys[0], pdf / lam)
    rec = w2_1d(mu, nu)
    var = float((xs**2 * pdf).sum() / pdf.sum())
    assert rec["w2sq"] == pytest.approx((lam - 1) ** 2 * var, rel=2e-3)


def test_w2_identical_is_zero():
    xs, h = make_grid(0, 1, 50)
    mu = GridField1D(0, h, np.ones(50))
    rec = w2_1d(mu, mu)
    assert rec["w2sq"] == 0.0


def test_w2_mass_mismatch_rejected():
    xs, h = make_grid(0, 1, 50)
    mu = GridField1D(0, h, np.ones(50))
    nu = GridField1D(0, h, 1.1 * np.ones(50))
    with pytest.raises(ValueError):
        w2_1d(mu, nu)


def test_ke_convexity():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = GridField2D(0, 0, 0.1, 0.1, rng.uniform(0, 1, (16, 16)))
        b = GridField2D(0, 0, 0.1, 0.1, rng.uniform(0, 1, (16, 16)))
        mid = GridField2D(0, 0, 0.1, 0.1, 0.5 * (a.values + b.values))
        assert mid.kinetic_energy() <= 0.5 * (a.kinetic_energy() + b.kinetic_energy()) + 1e-12


def test_e_eps_subadditivity():
    rng = np.random.default_rng(5)
    v = rng.uniform(0, 2, (16, 16))
    for _ in range(20):
        a = GridField2D(0, 0, 0.1, 0.1, rng.uniform(0, 1, (16, 16)))
        b = GridField2D(0, 0, 0.1, 0.1, rng.uniform(0, 1, (16, 16)))
        s = GridField2D(0, 0, 0.1, 0.1, a.values + b.values)
        ea = e_eps(a, v, 0.3)["E"]
        eb = e_eps(b, v, 0.3)["E"]
        es = e_eps(s, v, 0.3)["E"]
        assert es <= ea + eb + 1e-12


def test_grid_refinement_order():
    k = tg.TruncatedGaussian(M=np.diag([1.5, 0.7]), N=np.inf)
    exact = (1.5 + 0.7) / 4
    errs = []
    for n in (100, 200, 400):
        f = sample_kernel(k, -7.0, 7.0, n)
        errs.append(abs(f.kinetic_energy() - exact))
    order1 = math.log2(errs[0] / errs[1])
    order2 = math.log2(errs[1] / errs[2])
    assert order1 >= 1.0 and order2 >= 1.0


def test_csv_round_trip_bit_exact():
    rng = np.random.default_rng(6)
    f = GridField2D(-1.7, 0.3, 0.123456789, 0.2, rng.uniform(0, 1, (7, 5)))
    g = GridField2D.from_csv(f.to_csv())
    assert g.values.tobytes() == f.values.tobytes()
    assert (g.x0, g.y0, g.hx, g.hy) == (f.x0, f.y0, f.hx, f.hy)


def test_csv_round_trip_1d():
    rng = np.random.default_rng(9)
    f = GridField1D(-2.3, 0.0731, rng.uniform(0, 1, 17))
    g = GridField1D.from_csv(f.to_csv())
    assert g.values.tobytes() == f.values.tobytes()
    assert (g.x0, g.h) == (f.x0, f.h)


def test_diagonal_mask():
    f = GridField2D(0, 0, 0.1, 0.1, np.ones((11, 11)))
    m = f.diagonal_mask()
    assert m[3, 3] and not m[0, 10]
