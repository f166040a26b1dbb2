"""Rectangularly truncated anisotropic Gaussian kernels.

For a 2x2 SPD matrix M with eigenvalues a >= b > 0 and eigen-coordinates
(w, z), the unnormalized kernels are

    G~_{M,inf}(x) = exp(-a w^2 - b z^2),
    G~_{M,N}(x)   = (e^{-a w^2/2} - e^{-N/2})_+^2 (e^{-b z^2/2} - e^{-N/2})_+^2,

supported on the tilted rectangle {a w^2 <= N, b z^2 <= N}.  The square
root is truncated (and then squared) so that the kinetic energy stays
finite.  Normalizations are products of the 1D integrals

    G_{alpha,inf} = sqrt(pi/alpha),
    G_{alpha,N}   = sqrt(pi/alpha) erf(sqrt(N))
                    - 2 e^{-N/2} sqrt(2 pi/alpha) erf(sqrt(N/2))
                    + 2 e^{-N} sqrt(N/alpha),

and the kinetic energy of the normalized kernels is

    KE(Gamma_{M,inf}) = tr(M)/4,
    KE(Gamma_{M,N})   = (sqrt(a)/G_{a,N} + sqrt(b)/G_{b,N})
                        * sqrt(pi)/4 * (erf(sqrt(N)) - 2 sqrt(N/pi) e^{-N}).

The construction uses the matrix M = A/sqrt(eps) + I/beta where A is the
rank-1 PSD square root of the effective-potential Hessian on the optimal
graph; its kernel direction (the graph tangent) has slope tan(theta), and
the marginals of the kernel are convolutions of rescalings of the two 1D
factors:

    eta1 = (h1)_{sin theta} * (h2)_{cos theta},
    eta2 = (h1)_{cos theta} * (h2)_{sin theta},

with phi_{s}(x) = phi(x/s)/s.  All truncation-error constants are
measured numerically and reported; only their boundedness is asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

__all__ = [
    "g_alpha_n",
    "TruncatedGaussian",
    "make_kernel",
    "ke_gaussian",
    "truncation_error_report",
    "kernel_l1_distance",
    "kernel_l1_ratio",
]


def g_alpha_n(alpha: float, N: float) -> float:
    """1D normalization integral G_{alpha,N}; N = inf gives sqrt(pi/alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if np.isinf(N):
        return math.sqrt(math.pi / alpha)
    if N < 3:
        raise ValueError("truncation level N must be >= 3 (or inf)")
    return (
        math.sqrt(math.pi / alpha) * erf(math.sqrt(N))
        - 2.0 * math.exp(-N / 2.0) * math.sqrt(2.0 * math.pi / alpha) * erf(math.sqrt(N / 2.0))
        + 2.0 * math.exp(-N) * math.sqrt(N / alpha)
    )


def _h_factor(t, alpha: float, N: float, norm: float):
    """Normalized 1D factor h(t) = (e^{-alpha t^2/2} - e^{-N/2})_+^2 / G."""
    t = np.asarray(t, dtype=float)
    if np.isinf(N):
        return np.exp(-alpha * t * t) / norm
    return np.maximum(np.exp(-alpha * t * t / 2.0) - math.exp(-N / 2.0), 0.0) ** 2 / norm


@dataclass(frozen=True)
class TruncatedGaussian:
    """Normalized (truncated) Gaussian probability density on R^2.

    `theta` is the angle of the small-eigenvalue (long-axis) direction;
    isotropic matrices get theta = 0 by convention.  Instances are
    immutable value objects.
    """

    M: np.ndarray
    N: float
    center: tuple = (0.0, 0.0)
    a: float = field(init=False, default=0.0)
    b: float = field(init=False, default=0.0)
    theta: float = field(init=False, default=0.0)

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.shape != (2, 2) or abs(M[0, 1] - M[1, 0]) > 1e-12 * (1 + np.abs(M).max()):
            raise ValueError("M must be a symmetric 2x2 matrix")
        evals, evecs = np.linalg.eigh(M)
        if evals[0] <= 0:
            raise ValueError("M must be positive definite (use a finite beta)")
        b, a = float(evals[0]), float(evals[1])
        if np.isclose(a, b, rtol=1e-12):
            theta = 0.0
        else:
            vz = evecs[:, 0]  # long axis: eigenvector of the small eigenvalue
            theta = math.atan2(vz[1], vz[0])
            if theta < 0:
                theta += math.pi
            if theta >= math.pi / 2 + 1e-12:
                theta -= math.pi  # fold into (-pi/2, pi/2]
                theta = abs(theta) if abs(theta) < 1e-12 else theta
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "theta", float(theta))

    # -- geometry ------------------------------------------------------------

    @property
    def g_norm(self) -> float:
        return g_alpha_n(self.a, self.N) * g_alpha_n(self.b, self.N)

    def eigen_coords(self, x, y):
        """(w, z): w along the large-eigenvalue axis, z along the long axis."""
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        ct, st = math.cos(self.theta), math.sin(self.theta)
        z = ct * dx + st * dy
        w = -st * dx + ct * dy
        return w, z

    def support_halfwidths(self):
        """(W_a, W_b): half-extents along the w and z axes (inf if N=inf)."""
        if np.isinf(self.N):
            return np.inf, np.inf
        return math.sqrt(self.N / self.a), math.sqrt(self.N / self.b)

    def marginal_support_halfwidth(self, axis: int) -> float:
        wa, wb = self.support_halfwidths()
        if np.isinf(wa) or np.isinf(wb):
            return np.inf
        st, ct = abs(math.sin(self.theta)), abs(math.cos(self.theta))
        if axis == 0:
            return st * wa + ct * wb
        return ct * wa + st * wb

    # -- evaluation ----------------------------------------------------------

    def __call__(self, x, y):
        w, z = self.eigen_coords(x, y)
        ga = g_alpha_n(self.a, self.N)
        gb = g_alpha_n(self.b, self.N)
        return _h_factor(w, self.a, self.N, ga) * _h_factor(z, self.b, self.N, gb)

    def h1(self, w):
        """Transverse normalized factor (large eigenvalue a)."""
        return _h_factor(w, self.a, self.N, g_alpha_n(self.a, self.N))

    def h2(self, z):
        """Longitudinal normalized factor (small eigenvalue b)."""
        return _h_factor(z, self.b, self.N, g_alpha_n(self.b, self.N))

    def marginal(self, axis: int, x_eval):
        """Marginal density along a Cartesian axis, as the convolution of
        rescalings of h1 and h2 (Gauss-Legendre in the inner variable)."""
        x_eval = np.asarray(x_eval, dtype=float)
        st, ct = abs(math.sin(self.theta)), abs(math.cos(self.theta))
        c = self.center[axis]
        if np.isinf(self.N):  # Gaussian marginal in closed form
            var = (0.5 * np.linalg.inv(self.M))[axis, axis]
            return np.exp(-((x_eval - c) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)
        if st < 1e-14 or ct < 1e-14:  # axis-aligned kernel: marginal is a factor
            f = (self.h1 if ((axis == 0) == (st >= 0.5)) else self.h2)
            return f(x_eval - c)
        if axis == 0:
            s1, s2 = st, ct
        else:
            s1, s2 = ct, st
        # integrate (h1)_{s1}(x - t) (h2)_{s2}(t) over the intersection of
        # supports (the transverse factor is much narrower than the
        # longitudinal one); the only kinks sit at the interval ends, so a
        # single Gauss panel per abscissa is accurate
        wa, wb = self.support_halfwidths()
        xc = np.atleast_1d(x_eval - c)
        lo = np.maximum(-s2 * wb, xc - s1 * wa)
        hi = np.minimum(s2 * wb, xc + s1 * wa)
        half = np.maximum(0.5 * (hi - lo), 0.0)
        mid = 0.5 * (hi + lo)
        gl_x, gl_w = np.polynomial.legendre.leggauss(96)
        t = mid[..., None] + half[..., None] * gl_x
        vals = self.h1((xc[..., None] - t) / s1) / s1 * (self.h2(t / s2) / s2)
        out = (vals @ gl_w) * half
        return out.reshape(np.shape(x_eval)) if np.ndim(x_eval) else float(out[0])

    def ke(self) -> float:
        """Kinetic energy int |grad sqrt(Gamma)|^2 / 2 in closed form."""
        if np.isinf(self.N):
            return (self.a + self.b) / 4.0
        N = self.N
        factor = (math.sqrt(math.pi) / 4.0) * (
            erf(math.sqrt(N)) - 2.0 * math.sqrt(N / math.pi) * math.exp(-N)
        )
        return (
            math.sqrt(self.a) / g_alpha_n(self.a, N)
            + math.sqrt(self.b) / g_alpha_n(self.b, N)
        ) * factor

    def ke_quadrature(self, n_nodes: int = 320) -> float:
        """Independent kinetic-energy oracle: tensor Gauss-Legendre of
        |grad sqrt(Gamma)|^2/2 over the support rectangle in (w, z)."""
        if np.isinf(self.N):
            wa = 9.0 / math.sqrt(self.a)
            wb = 9.0 / math.sqrt(self.b)
        else:
            wa, wb = self.support_halfwidths()
        gl_x, gl_w = np.polynomial.legendre.leggauss(n_nodes)
        w = wa * gl_x
        z = wb * gl_x
        ga = g_alpha_n(self.a, self.N)
        gb = g_alpha_n(self.b, self.N)
        if np.isinf(self.N):
            f1 = np.exp(-self.a * w * w / 2.0)
            f2 = np.exp(-self.b * z * z / 2.0)
            d1 = -self.a * w * f1
            d2 = -self.b * z * f2
        else:
            e1 = np.exp(-self.a * w * w / 2.0)
            e2 = np.exp(-self.b * z * z / 2.0)
            f1 = np.maximum(e1 - math.exp(-self.N / 2.0), 0.0)
            f2 = np.maximum(e2 - math.exp(-self.N / 2.0), 0.0)
            d1 = -self.a * w * e1 * (f1 > 0)
            d2 = -self.b * z * e2 * (f2 > 0)
        # sqrt(Gamma) = f1(w) f2(z) / sqrt(G): |grad|^2 = (d1 f2)^2 + (f1 d2)^2
        gsq = np.add.outer(d1**2 * gl_w * wa, np.zeros(n_nodes)) * (f2**2 * gl_w * wb)[None, :]
        gsq += np.add.outer(f1**2 * gl_w * wa, np.zeros(n_nodes)) * (d2**2 * gl_w * wb)[None, :]
        return float(gsq.sum()) / (2.0 * ga * gb)

    def mass_quadrature(self, n_nodes: int = 320) -> float:
        if np.isinf(self.N):
            wa = 9.0 / math.sqrt(self.a)
            wb = 9.0 / math.sqrt(self.b)
        else:
            wa, wb = self.support_halfwidths()
        gl_x, gl_w = np.polynomial.legendre.leggauss(n_nodes)
        ga = g_alpha_n(self.a, self.N)
        gb = g_alpha_n(self.b, self.N)
        m1 = float(_h_factor(wa * gl_x, self.a, self.N, ga) @ gl_w) * wa
        m2 = float(_h_factor(wb * gl_x, self.b, self.N, gb) @ gl_w) * wb
        return m1 * m2


def make_kernel(A: np.ndarray, eps: float, beta: float, N: float,
                center=(0.0, 0.0)) -> TruncatedGaussian:
    """Kernel with matrix M = A/sqrt(eps) + I/beta for a rank-1 PSD A.

    The long axis (eigenvalue 1/beta) lies along ker(A), i.e. along the
    graph tangent; the transverse eigenvalue is q/sqrt(eps) + 1/beta.
    """
    if eps <= 0 or beta <= 0 or (not np.isinf(N) and N <= 0):
        raise ValueError("eps, beta, N must all be positive")
    if not np.isfinite(beta):
        raise ValueError("beta must be finite (M would be singular)")
    A = np.asarray(A, dtype=float)
    M = A / math.sqrt(eps) + np.eye(2) / beta
    return TruncatedGaussian(M=M, N=N, center=tuple(center))


def ke_gaussian(k: TruncatedGaussian) -> float:
    return k.ke()


def gauss_outside_rectangle_mass(a, b, N):
    """int of Gamma_{M,inf} outside the truncation rectangle (closed form)."""
    pa = erf(math.sqrt(N))
    pb = erf(math.sqrt(N))
    return 1.0 - pa * pb


def truncation_error_report(a: float, b: float, N: float, theta: float = math.pi / 5,
                            grid_n: int = 801) -> dict:
    """Numeric constants in the truncation inequalities for one (a, b, N).

    Measures, with the scaling factors divided out:
      gn_const:    (G_inf - G_N) / (e^{-N/2} G_inf)            [> 0 required]
      linf_const:  ||Gamma_N - Gamma_inf||_inf / (sqrt(det M) e^{-N/2})
      l1_const:    ||Gamma_N - Gamma_inf||_1 / (N e^{-N/2})
      marg_const:  ||eta_N - eta_inf||_inf / (sqrt(a) sqrt(N) e^{-N/2})
      quad_energy_const: int |Mx|^2 |Gamma_N - Gamma_inf| / (tr M N e^{-N/2})
      ke_const:    |KE_N - tr M /4| / (tr M e^{-N/2})
    """
    if N < 3:
        raise ValueError("N must be >= 3")
    ga_n, gb_n = g_alpha_n(a, N), g_alpha_n(b, N)
    ga_i, gb_i = g_alpha_n(a, np.inf), g_alpha_n(b, np.inf)
    gmn, gmi = ga_n * gb_n, ga_i * gb_i
    if not gmn < gmi:
        raise AssertionError("G_{M,N} < G_{M,inf} violated")
    en2 = math.exp(-N / 2.0)
    gn_const = (gmi - gmn) / (en2 * gmi)

    # everything below is computed in eigen-coordinates on a grid covering
    # the truncation rectangle (the difference vanishes outside up to the
    # closed-form Gaussian remainder)
    wa, wb = math.sqrt(N / a), math.sqrt(N / b)
    w = np.linspace(-wa, wa, grid_n)
    z = np.linspace(-wb, wb, grid_n)
    hw, hz = w[1] - w[0], z[1] - z[0]
    f_n = np.outer(_h_factor(w, a, N, ga_n), _h_factor(z, b, N, gb_n))
    f_i = np.outer(_h_factor(w, a, np.inf, ga_i), _h_factor(z, b, np.inf, gb_i))
    diff = np.abs(f_n - f_i)
    det_m = a * b
    linf_const = float(diff.max()) / (math.sqrt(det_m) * en2)

    inside_l1 = float(diff.sum()) * hw * hz
    # Gaussian mass outside the rectangle, exact via erf products
    mass_in = erf(math.sqrt(N)) ** 2
    l1 = inside_l1 + (1.0 - mass_in)
    l1_const = l1 / (N * en2)

    # |Mx|^2 = a^2 w^2 + b^2 z^2 in eigen-coordinates
    m2 = np.add.outer(a**2 * w**2, b**2 * z**2)
    inside_q = float((m2 * diff).sum()) * hw * hz
    # outside: int (a^2 w^2 + b^2 z^2) Gamma_inf over the rectangle complement
    def gauss_moment_inside(alpha, wmax):
        # int_{-wmax}^{wmax} alpha^2 t^2 e^{-alpha t^2} dt / sqrt(pi/alpha)
        rn = math.sqrt(alpha) * wmax
        return alpha * (0.5 * erf(rn) - rn * math.exp(-rn * rn) / math.sqrt(math.pi))

    pa = erf(math.sqrt(N))
    mom_a_in = gauss_moment_inside(a, wa)
    mom_b_in = gauss_moment_inside(b, wb)
    total_q = a / 2.0 + b / 2.0  # full-plane moments of Gamma_inf
    outside_q = total_q - (mom_a_in * pa + mom_b_in * pa)
    quad_energy_const = (inside_q + outside_q) / ((a + b) * N * en2)

    k_n = TruncatedGaussian(M=np.diag([a, b]), N=N)
    ke_n = k_n.ke()
    ke_const = abs(ke_n - (a + b) / 4.0) / ((a + b) * en2)

    # marginal in a rotated frame (sqrt(a)-normalized difference):
    # evaluate eta along the first Cartesian axis for a kernel tilted by
    # theta
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    m_rot = rot @ np.diag([b, a]) @ rot.T  # long axis at angle theta
    k_rot_n = TruncatedGaussian(M=m_rot, N=N)
    halfw = k_rot_n.marginal_support_halfwidth(0)
    xs = np.linspace(-halfw, halfw, 501)
    eta_n = k_rot_n.marginal(0, xs)
    # untruncated marginal: 1D Gaussian with variance of the x coordinate
    cov = 0.5 * np.linalg.inv(m_rot)
    var_x = cov[0, 0]
    eta_i = np.exp(-xs**2 / (2 * var_x)) / math.sqrt(2 * math.pi * var_x)
    marg_const = float(np.max(np.abs(eta_n - eta_i))) / (math.sqrt(a) * math.sqrt(N) * en2)

    return {
        "a": a, "b": b, "N": N,
        "gn_const": gn_const,
        "linf_const": linf_const,
        "l1_const": l1_const,
        "marg_const": marg_const,
        "quad_energy_const": quad_energy_const,
        "ke_const": ke_const,
    }


def kernel_l1_ratio(k1: TruncatedGaussian, k2: TruncatedGaussian,
                    eps: float, beta: float, delta: float,
                    grid_n: int = 601) -> dict:
    """Distance together with its ratio against the perturbation bound
    C (eps^{-1/4} delta^2 + eps^{-1/2} beta delta), valid when the centers
    differ by at most delta^2 and the generating matrices by delta."""
    dist = kernel_l1_distance(k1, k2, grid_n)
    bound_shape = eps ** (-0.25) * delta**2 + eps ** (-0.5) * beta * delta
    return {"l1": dist, "bound_shape": bound_shape,
            "ratio": dist / bound_shape if bound_shape > 0 else math.inf}


def kernel_l1_distance(k1: TruncatedGaussian, k2: TruncatedGaussian,
                       grid_n: int = 601) -> float:
    """||Gamma_1 - Gamma_2||_1 on the union of supports, by midpoint grid."""
    boxes = []
    for k in (k1, k2):
        hx = k.marginal_support_halfwidth(0)
        hy = k.marginal_support_halfwidth(1)
        if np.isinf(hx) or np.isinf(hy):
            hx = 9.0 * math.sqrt(max(1 / k.a, 1 / k.b))
            hy = hx
        boxes.append((k.center[0] - hx, k.center[0] + hx,
                      k.center[1] - hy, k.center[1] + hy))
    x0 = min(b[0] for b in boxes)
    x1 = max(b[1] for b in boxes)
    y0 = min(b[2] for b in boxes)
    y1 = max(b[3] for b in boxes)
    xs = np.linspace(x0, x1, grid_n)
    ys = np.linspace(y0, y1, grid_n)
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    return float(np.abs(k1(xg, yg) - k2(xg, yg)).sum()) * hx * hy
