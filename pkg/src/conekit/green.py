"""Green function of the model cone and its derivative kernels.

For n >= 2 the time integral of the heat kernel is carried out against
each brace part in closed form, which turns Gamma = -int_0^inf H dt into

    Gamma = -(Gamma(n-1)/(4 pi^n)) * [ sum_k' w_k d_k^(2-2n)
            + (sin(pi/beta)/(pi beta)) * int_0^inf R(y) Q(y)^(1-n) dy ],

with d_k^2 = q^2 - 2 r r' cos(psi_k) the squared image distances
(q^2 = r^2 + r'^2 + |w - w'|^2), Q(y) = q^2 + 2 r r' cosh(y), w_k the
1 or 1/2 image weights, and R the diffraction ratio shared with the heat
kernel module.  This is the u = q^2/(4t) substitution of the defining
integral taken exactly, so one well-conditioned y-integral remains.

Gamma is the fundamental solution of the *real* cone Laplacian: its flux
through small spheres is 1 and Gamma < 0.  All first and mixed second
derivatives used by the singular integral operators are assembled from
the partial derivatives of the same reduced formula, with tangential
dependence entering only through P = |w - w'|^2.

At n = 1 the time integral diverges; green_function_2d provides the
Fourier-mode Green function of the two-dimensional cone instead, in
closed logarithmic form.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as _gamma_fn

import numpy as np

from .geometry import PolarPoint, DerivOp, _as_beta, cone_distance
from .heatkernel import (DEFAULT_QUAD, QuadratureSpec, _Y_SMALL, _W_SMALL,
                         _critical_distance, _diffraction_prefactor,
                         _is_integer_reciprocal, _NEAR_CRITICAL,
                         diffraction_ratio, image_angles, near_critical_nodes,
                         reduce_angle)

__all__ = [
    "gamma_core",
    "green_function",
    "green_function_2d",
    "green_derivative",
    "green_gradient_y",
    "green_flux",
    "kernel_holder_check",
    "HolderFit",
]

_ALL_NEEDS = ("F", "Fr", "Frp", "FA", "FP", "FPP", "FrP", "FrpP", "FAP")


def _green_const(n: int) -> float:
    return _gamma_fn(n - 1) / (4.0 * np.pi**n)


def gamma_core(r, rp, A, P, beta, n, needs=("F",), quad=DEFAULT_QUAD,
               numerator="reduced", chunk=40000):
    """Vectorized Green function partials in the variables (r, r', A, P).

    A is the reduced angle difference in (-pi, pi] and P = |w - w'|^2.
    Returns a dict keyed by `needs` with entries among

        F    : Gamma itself
        Fr   : d/dr      Frp : d/dr'     FA : d/dA      FP  : d/dP
        FPP  : d^2/dP^2  FrP : d^2/dr dP FrpP: d^2/dr'dP FAP: d^2/dA dP
    """
    for k in needs:
        if k not in _ALL_NEEDS:
            raise ValueError(f"unknown derivative key {k!r}")
    if n < 2:
        raise ValueError("gamma_core requires n >= 2; use green_function_2d at n = 1")
    b = _as_beta(beta)
    r, rp, A, P = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                        for v in (r, rp, A, P)))
    shape = r.shape
    flat = [v.reshape(-1) for v in (r, rp, A, P)]
    out = {k: np.empty(flat[0].shape) for k in needs}
    for lo in range(0, flat[0].size, chunk):
        sl = slice(lo, lo + chunk)
        res = _gamma_core_chunk(*(v[sl] for v in flat), b, n, needs, quad, numerator)
        for k in needs:
            out[k][sl] = res[k]
    return {k: v.reshape(shape) for k, v in out.items()}


def _gamma_core_chunk(r, rp, A, P, b, n, needs, quad, numerator):
    m = float(n - 1)
    q2 = r * r + rp * rp + P
    acc = {k: np.zeros(r.shape) for k in needs}

    # image part -----------------------------------------------------------
    psi, main, bdry = image_angles(A, b, quad.boundary_eps)
    w = np.where(main, 1.0, 0.0) + 0.5 * np.where(bdry, 1.0, 0.0)
    cospsi = np.cos(psi)
    d2 = q2[..., None] - 2.0 * (r * rp)[..., None] * cospsi
    d2 = np.maximum(d2, 1e-300)
    # power ladder d2^(-m-2), d2^(-m-1), d2^(-m)
    e2 = d2 ** (-m - 2.0)
    e1 = e2 * d2
    e0 = e1 * d2

    def s_acc(vals):
        return np.sum(w * vals, axis=-1)

    dd_r = 2.0 * r[..., None] - 2.0 * rp[..., None] * cospsi
    dd_rp = 2.0 * rp[..., None] - 2.0 * r[..., None] * cospsi
    dd_A = 2.0 * (r * rp)[..., None] * b * np.sin(psi)
    if "F" in needs:
        acc["F"] += s_acc(e0)
    if "Fr" in needs:
        acc["Fr"] += -m * s_acc(e1 * dd_r)
    if "Frp" in needs:
        acc["Frp"] += -m * s_acc(e1 * dd_rp)
    if "FA" in needs:
        acc["FA"] += -m * s_acc(e1 * dd_A)
    if "FP" in needs:
        acc["FP"] += -m * s_acc(e1)
    if "FPP" in needs:
        acc["FPP"] += m * (m + 1.0) * s_acc(e2)
    if "FrP" in needs:
        acc["FrP"] += m * (m + 1.0) * s_acc(e2 * dd_r)
    if "FrpP" in needs:
        acc["FrpP"] += m * (m + 1.0) * s_acc(e2 * dd_rp)
    if "FAP" in needs:
        acc["FAP"] += m * (m + 1.0) * s_acc(e2 * dd_A)

    # diffraction part ------------------------------------------------------
    if not _is_integer_reciprocal(b):
        ck = _diffraction_prefactor(b)
        want_dA = any(k in needs for k in ("FA", "FAP"))
        delta = _critical_distance(A, b)
        near = delta < _NEAR_CRITICAL
        groups = []
        if np.any(~near):
            groups.append((~near, _Y_SMALL[None, :], _W_SMALL[None, :]))
        if np.any(near):
            idx = np.where(near)[0]
            for sub, y, wt in near_critical_nodes(A[near], b):
                groups.append((idx[sub], y, wt))
        for sel, y, wt in groups:
            ratio = diffraction_ratio(y, A[sel, None], b, numerator,
                                      want_dA=want_dA, snap_eps=quad.boundary_eps)
            R, R_A = ratio if want_dA else (ratio, None)
            ch = np.cosh(y)
            Q = q2[sel, None] + 2.0 * (r * rp)[sel, None] * ch
            Qp1 = Q ** (-m - 1.0)
            Qp0 = Qp1 * Q
            Qp = Qp0 * Q
            dQ_r = 2.0 * r[sel, None] + 2.0 * rp[sel, None] * ch
            dQ_rp = 2.0 * rp[sel, None] + 2.0 * r[sel, None] * ch

            def j_acc(vals):
                return ck * np.sum(wt * vals, axis=-1)

            if "F" in needs:
                acc["F"][sel] += j_acc(R * Qp)
            if "Fr" in needs:
                acc["Fr"][sel] += -m * j_acc(R * Qp0 * dQ_r)
            if "Frp" in needs:
                acc["Frp"][sel] += -m * j_acc(R * Qp0 * dQ_rp)
            if "FA" in needs:
                acc["FA"][sel] += j_acc(R_A * Qp)
            if "FP" in needs:
                acc["FP"][sel] += -m * j_acc(R * Qp0)
            if "FPP" in needs:
                acc["FPP"][sel] += m * (m + 1.0) * j_acc(R * Qp1)
            if "FrP" in needs:
                acc["FrP"][sel] += m * (m + 1.0) * j_acc(R * Qp1 * dQ_r)
            if "FrpP" in needs:
                acc["FrpP"][sel] += m * (m + 1.0) * j_acc(R * Qp1 * dQ_rp)
            if "FAP" in needs:
                acc["FAP"][sel] += -m * j_acc(R_A * Qp0)

    cn = _green_const(n)
    return {k: -cn * v for k, v in acc.items()}


def _geometry(x: PolarPoint, y: PolarPoint):
    dw = x.w_array() - y.w_array()
    return float(reduce_angle(x.theta - y.theta)), float(dw @ dw), dw


def green_function(x: PolarPoint, y: PolarPoint, beta, n: int = None,
                   quad: QuadratureSpec = DEFAULT_QUAD,
                   numerator: str = "reduced") -> float:
    """Green function Gamma(x, y) < 0 of the model cone, n >= 2.

    Fundamental solution of the real cone Laplacian with respect to
    dV = beta r dr dtheta dw; the flux of grad Gamma through small spheres
    around x is 1.  Raises on x = y and on n = 1 (see green_function_2d).
    """
    if n is None:
        n = x.n
    if n < 2:
        raise ValueError("the time integral diverges at n = 1; use green_function_2d")
    if x.n != y.n or x.n != n:
        raise ValueError("dimension mismatch between points and n")
    A, P, _ = _geometry(x, y)
    if cone_distance(x, y, beta) == 0.0:
        raise ValueError("Green function is singular on the diagonal x = y")
    res = gamma_core(np.array([x.r]), np.array([y.r]), np.array([A]),
                     np.array([P]), beta, n, ("F",), quad, numerator)
    return float(res["F"][0])


def green_function_2d(x: PolarPoint, y: PolarPoint, beta,
                      series_terms: int = None) -> float:
    """Green function of the two-dimensional cone (n = 1).

    Built from the separated harmonics r^(|k|/beta) e^(i k theta); the mode
    sum has the closed form

        (1/(2 pi beta)) log(r_>) + (1/(4 pi)) log(1 - 2 q cos(dtheta) + q^2),

    q = (r_< / r_>)^(1/beta).  Normalized so the flux through small circles
    around x is 1 (real cone Laplacian, measure beta r dr dtheta).  With
    series_terms given, the truncated mode sum is returned instead.
    """
    b = _as_beta(beta)
    if x.r == y.r and reduce_angle(x.theta - y.theta) == 0.0:
        raise ValueError("Green function is singular on the diagonal x = y")
    r_hi = max(x.r, y.r)
    r_lo = min(x.r, y.r)
    if r_hi == 0.0:
        raise ValueError("Green function undefined with both points at the apex")
    dth = x.theta - y.theta
    lead = np.log(r_hi) / (2.0 * np.pi * b)
    if r_lo == 0.0:
        return float(lead)
    qq = (r_lo / r_hi) ** (1.0 / b)
    if series_terms is None:
        return float(lead + np.log(1.0 - 2.0 * qq * np.cos(dth) + qq * qq) / (4.0 * np.pi))
    if series_terms < 1:
        raise ValueError("series_terms must be >= 1")
    k = np.arange(1, series_terms + 1)
    return float(lead - np.sum(qq**k * np.cos(k * dth) / k) / (2.0 * np.pi))


def _first_derivative(tag: str, idx: int, x: PolarPoint, y: PolarPoint, core,
                      dw) -> float:
    if tag == "r_x":
        return core["Fr"]
    if tag == "theta_x":
        return core["FA"]
    if tag == "w_x":
        return 2.0 * dw[idx] * core["FP"]
    if tag == "r_y":
        return core["Frp"]
    if tag == "theta_y":
        return -core["FA"]
    if tag == "w_y":
        return -2.0 * dw[idx] * core["FP"]
    raise ValueError(f"unknown first-derivative tag {tag!r}")


_FIRST_NEEDS = {"r_x": ("Fr",), "theta_x": ("FA",), "w_x": ("FP",),
                "r_y": ("Frp",), "theta_y": ("FA",), "w_y": ("FP",)}


def green_derivative(op, x: PolarPoint, y: PolarPoint, beta, n: int = None,
                     quad: QuadratureSpec = DEFAULT_QUAD,
                     numerator: str = "reduced") -> float:
    """Derivative of Gamma(x, y) for op in the T or M family or first order.

    op is a DerivOp, or for first derivatives a (tag, index) pair / bare tag
    with tag in {"r_x", "theta_x", "w_x", "r_y", "theta_y", "w_y"}.
    Tangential x-derivatives equal minus the corresponding y-derivatives
    (the kernel depends on w - w' only); this exactness is exercised by the
    test suite rather than assumed.
    """
    if n is None:
        n = x.n
    if x.n != y.n or x.n != n:
        raise ValueError("dimension mismatch between points and n")
    if cone_distance(x, y, beta) == 0.0:
        raise ValueError("kernel derivatives are singular on the diagonal")
    A, P, dw = _geometry(x, y)

    if isinstance(op, DerivOp):
        op.validate(n)
        needs = {"wr": ("FrP",), "ww": ("FP", "FPP"), "wtheta": ("FAP",),
                 "r_y": ("FrP",), "theta_y": ("FAP",), "x_y": ("FP", "FPP")}[op.tag]
    else:
        tag, idx = op if isinstance(op, tuple) else (op, 0)
        needs = _FIRST_NEEDS[tag]

    core = gamma_core(np.array([x.r]), np.array([y.r]), np.array([A]),
                      np.array([P]), beta, n, needs, quad, numerator)
    core = {k: float(v[0]) for k, v in core.items()}

    if not isinstance(op, DerivOp):
        tag, idx = op if isinstance(op, tuple) else (op, 0)
        return float(_first_derivative(tag, idx, x, y, core, dw))

    if op.tag == "wr":
        return float(2.0 * dw[op.i] * core["FrP"])
    if op.tag == "ww":
        kron = 1.0 if op.i == op.j else 0.0
        return float(2.0 * kron * core["FP"] + 4.0 * dw[op.i] * dw[op.j] * core["FPP"])
    if op.tag == "wtheta":
        return float(2.0 * dw[op.i] * core["FAP"] / x.r)
    if op.tag == "r_y":
        return float(-2.0 * dw[op.j] * core["FrP"])
    if op.tag == "theta_y":
        return float(-2.0 * dw[op.j] * core["FAP"] / x.r)
    if op.tag == "x_y":
        kron = 1.0 if op.i == op.j else 0.0
        return float(-2.0 * kron * core["FP"] - 4.0 * dw[op.i] * dw[op.j] * core["FPP"])
    raise ValueError(f"unhandled op {op}")


def green_gradient_y(x: PolarPoint, y: PolarPoint, beta, n: int = None,
                     quad: QuadratureSpec = DEFAULT_QUAD) -> tuple:
    """Gradient of Gamma(x, .) at y in the orthonormal cone frame.

    Returns (d/dr', (1/(beta r')) d/dtheta', d/dw') with the tangential
    part as an array.
    """
    if n is None:
        n = x.n
    A, P, dw = _geometry(x, y)
    core = gamma_core(np.array([x.r]), np.array([y.r]), np.array([A]),
                      np.array([P]), beta, n, ("Frp", "FA", "FP"), quad)
    b = _as_beta(beta)
    dr = float(core["Frp"][0])
    dth = float(-core["FA"][0]) / (b * y.r) if y.r > 0 else 0.0
    dtan = -2.0 * dw * float(core["FP"][0])
    return dr, dth, dtan


def _sphere_rule(n: int, nodes: int):
    """Product quadrature on the unit sphere S^(2n-1): points and weights."""
    from numpy.polynomial.legendre import leggauss
    d = 2 * n
    polar_counts = [max(8, nodes)] * (d - 2)
    azim = 2 * max(8, nodes)
    grids = []
    weights = []
    for k, mcount in enumerate(polar_counts):
        xg, wg = leggauss(mcount)
        phi = 0.5 * np.pi * (xg + 1.0)
        wphi = 0.5 * np.pi * wg * np.sin(phi) ** (d - 2 - k)
        grids.append(phi)
        weights.append(wphi)
    phi_a = 2.0 * np.pi * np.arange(azim) / azim
    grids.append(phi_a)
    weights.append(np.full(azim, 2.0 * np.pi / azim))
    mesh = np.meshgrid(*grids, indexing="ij")
    wmesh = np.ones(mesh[0].shape)
    for k, wv in enumerate(weights):
        shape = [1] * len(grids)
        shape[k] = -1
        wmesh = wmesh * wv.reshape(shape)
    pts = np.empty((*mesh[0].shape, d))
    sin_prod = np.ones(mesh[0].shape)
    for k in range(d - 1):
        pts[..., k] = sin_prod * np.cos(mesh[k])
        sin_prod = sin_prod * np.sin(mesh[k])
    pts[..., d - 1] = sin_prod
    return pts.reshape(-1, d), wmesh.reshape(-1)


def green_flux(x: PolarPoint, eps: float, beta, n: int = None,
               quad: QuadratureSpec = DEFAULT_QUAD, sphere_nodes: int = 24,
               numerator: str = "reduced") -> float:
    """Outward flux of grad Gamma(x, .) through the geodesic sphere of
    radius eps around x; tends to (and numerically equals) 1.

    Requires 0 < eps < r_x sin(pi beta)/2 so the sphere stays inside the
    locally flat region, where the sphere is parametrized through the
    isometric chart (u, v) = (r cos(beta dtheta), r sin(beta dtheta)).
    """
    if n is None:
        n = x.n
    b = _as_beta(beta)
    if x.r <= 0.0:
        raise ValueError("flux sphere center must lie off the axis")
    if not (0.0 < eps < x.r * np.sin(np.pi * b) / 2.0):
        raise ValueError(f"eps must lie in (0, {x.r * np.sin(np.pi * b) / 2.0:.4g})")
    pts, wts = _sphere_rule(n, sphere_nodes)
    u = x.r + eps * pts[:, 0]
    v = eps * pts[:, 1]
    r_y = np.hypot(u, v)
    chi = np.arctan2(v, u)
    A = reduce_angle((x.theta) - (x.theta + chi / b))  # theta_x - theta_y
    dw = -eps * pts[:, 2:]                              # w_x - w_y
    P = np.sum(dw * dw, axis=1)
    core = gamma_core(np.full(r_y.shape, x.r), r_y, A, P, beta, n,
                      ("Frp", "FA", "FP"), quad, numerator)
    grad_r = core["Frp"]
    grad_t = -core["FA"] / (b * r_y)
    g_u = np.cos(chi) * grad_r - np.sin(chi) * grad_t
    g_v = np.sin(chi) * grad_r + np.cos(chi) * grad_t
    normal_deriv = pts[:, 0] * g_u + pts[:, 1] * g_v
    if n > 1:
        grad_w = -2.0 * dw * core["FP"][:, None]
        normal_deriv = normal_deriv + np.sum(pts[:, 2:] * grad_w, axis=1)
    return float(np.sum(wts * normal_deriv) * eps ** (2 * n - 1))


@dataclass(frozen=True)
class HolderFit:
    """Log-log least squares fit sup |D(s)| ~ C s^alpha over dyadic scales."""

    exponent: float
    constant: float
    scales: tuple
    sups: tuple


def _mixed_kernel_value(op: DerivOp, x: PolarPoint, v: PolarPoint, beta, n,
                        core_cache, quad):
    A, P, dw = _geometry(x, v)
    key = (v.r, A, P)
    if key not in core_cache:
        core_cache[key] = gamma_core(
            np.array([x.r]), np.array([v.r]), np.array([A]), np.array([P]),
            beta, n, ("FP", "FPP", "FrP", "FAP"), quad)
    core = {k: float(val[0]) for k, val in core_cache[key].items()}
    if op.tag == "r_y":
        return -2.0 * dw[op.j] * core["FrP"]
    if op.tag == "theta_y":
        return -2.0 * dw[op.j] * core["FAP"] / x.r
    if op.tag == "x_y":
        kron = 1.0 if op.i == op.j else 0.0
        return -2.0 * kron * core["FP"] - 4.0 * dw[op.i] * dw[op.j] * core["FPP"]
    raise ValueError("kernel_holder_check requires an M-family operator")


def kernel_holder_check(op: DerivOp, x: PolarPoint, beta, n: int = 2,
                        pairs_per_scale: int = 40, scales: int = 6,
                        s_max: float = 0.08, seed: int = 0,
                        quad: QuadratureSpec = DEFAULT_QUAD) -> HolderFit:
    """Fitted Holder exponent of v -> D Gamma (x, v), D in the M family.

    Samples pairs (v1, v2) with |v| < 1/8 straddling and surrounding the
    axis at dyadic separations, records the per-scale sup of
    |D Gamma(x,v1) - D Gamma(x,v2)|, and least-squares fits the log-log
    slope.  The regularity theory predicts a slope of at least
    min(1/beta - 1, 1).
    """
    if op.family != "M":
        raise ValueError("kernel_holder_check requires an M-family operator")
    if scales < 3 or pairs_per_scale < 4:
        raise ValueError("insufficient samples for a stable fit")
    rng = np.random.default_rng(seed)
    dim = 2 * n - 2
    cache = {}
    svals, sups = [], []
    for mlev in range(scales):
        s = s_max / 2.0**mlev
        best = 0.0
        for _ in range(pairs_per_scale):
            w0 = rng.uniform(-0.02, 0.02, dim)
            mode = rng.integers(3)
            if mode == 0:
                # pair straddling the axis in the normal slice
                v1 = PolarPoint(rng.uniform(0, s), rng.uniform(0, 2 * np.pi), tuple(w0))
                v2 = PolarPoint(rng.uniform(0, s), rng.uniform(0, 2 * np.pi), tuple(w0))
            elif mode == 1:
                # radial pair at a common angle
                th = rng.uniform(0, 2 * np.pi)
                r1 = rng.uniform(0, 0.1)
                v1 = PolarPoint(r1, th, tuple(w0))
                v2 = PolarPoint(abs(r1 + rng.uniform(-s, s)), th, tuple(w0))
            else:
                # tangential move
                r1 = rng.uniform(0, 0.1)
                th = rng.uniform(0, 2 * np.pi)
                dwv = rng.normal(size=dim)
                dwv *= s * rng.uniform(0.3, 1.0) / np.linalg.norm(dwv)
                v1 = PolarPoint(r1, th, tuple(w0))
                v2 = PolarPoint(r1, th, tuple(w0 + dwv))
            d = cone_distance(v1, v2, beta)
            if not (s / 4.0 < d <= s):
                continue
            g1 = _mixed_kernel_value(op, x, v1, beta, n, cache, quad)
            g2 = _mixed_kernel_value(op, x, v2, beta, n, cache, quad)
            best = max(best, abs(g1 - g2))
        if best > 0.0:
            svals.append(s)
            sups.append(best)
    if len(svals) < 3:
        raise RuntimeError("insufficient samples survived the distance bins")
    lx, ly = np.log(svals), np.log(sups)
    slope, intercept = np.polyfit(lx, ly, 1)
    return HolderFit(float(slope), float(np.exp(intercept)),
                     tuple(svals), tuple(sups))
