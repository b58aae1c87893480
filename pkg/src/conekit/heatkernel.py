"""Heat kernel of the flat model cone C_beta x R^(2n-2).

The kernel is evaluated from the classical contour-integral (Carslaw type)
representation: a geometric sum of Gaussian image terms over the angles
beta*[dtheta] + 2*pi*beta*k lying strictly inside (-pi, pi), a diffraction
integral correcting beyond the image sum, and half-weighted boundary terms
when an image angle degenerates to +-pi exactly.

With s = r*r'/(2t), c = 1/beta and A = the representative of theta-theta'
in (-pi, pi], the diffraction term is

    K(s, beta*A) = (sin(pi*c) / (pi*beta)) * int_0^inf exp(-s*cosh(y))
                   * N(y) / D(y) dy,
    N(y) = cos(pi*c) - cos(arg) * cosh(c*y),
    D(y) = (cosh(c*y) - cos(A - pi*c)) * (cosh(c*y) - cos(A + pi*c)).

Two readings of the numerator argument are supported: "reduced" takes
arg = A (the full reduced angle difference) and "scaled" takes arg = beta*A
(the intrinsic arc angle).  The readings are distinguished empirically by
the mass/semigroup checks; "reduced" is the validated default (see README).

The kernel solves d/dt H = Lap H for the *real* Laplacian of the cone
metric and has unit mass against dV = beta * r dr dtheta dw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad as _scipy_quad

from .geometry import PolarPoint, _as_beta

__all__ = [
    "QuadratureSpec",
    "KernelValue",
    "QuadratureError",
    "DegenerateAngleError",
    "NUMERATOR_READINGS",
    "VALIDATED_NUMERATOR",
    "reduce_angle",
    "image_angles",
    "diffraction_term",
    "heat_kernel",
    "kernel_total",
]

NUMERATOR_READINGS = ("reduced", "scaled")
#: Reading of the diffraction numerator that passes the image-sum and
#: mass/semigroup checks (recorded by tests/test_acceptance.py).
VALIDATED_NUMERATOR = "reduced"

# Angle band (distance to a critical angle) inside which the diffraction
# integral falls back to adaptive quadrature; the integrand has a peak of
# width ~ beta * distance at y = 0 there.
_NEAR_CRITICAL = 6e-2


class QuadratureError(RuntimeError):
    """Raised when an integral tail estimate exceeds the requested tolerance."""

    def __init__(self, message: str, tail: float = np.nan):
        super().__init__(message)
        self.tail = tail


class DegenerateAngleError(ValueError):
    """Angle difference sits on an image boundary; use the boundary branch."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts, truncations and tolerances for the kernel integrals.

    y_nodes / y_max control the diffraction integral, t_nodes / t_max the
    time integral of the Green-function oracle, rel_tol the accepted
    relative tail, and boundary_eps the band around the degenerate angle
    branch beta*[dtheta] + 2*k*beta*pi = +-pi.
    """

    y_nodes: int = 128
    y_max: float = 30.0
    t_nodes: int = 96
    t_max: float = 200.0
    rel_tol: float = 1e-9
    boundary_eps: float = 1e-10

    def __post_init__(self):
        if self.y_nodes < 8 or self.t_nodes < 8:
            raise ValueError("node counts must be >= 8")
        if not (0.0 < self.rel_tol < 1.0 and 0.0 < self.boundary_eps < 1.0):
            raise ValueError("tolerances must lie in (0, 1)")
        if self.y_max <= 0 or self.t_max <= 0:
            raise ValueError("truncation bounds must be positive")


DEFAULT_QUAD = QuadratureSpec()


@dataclass(frozen=True)
class KernelValue:
    """Heat kernel value split into its three brace parts.

    total = (4*pi*t)^(-n) * exp(-(r^2 + r'^2 + R^2)/(4t))
            * (image_sum + diffraction + boundary).
    """

    total: float
    image_sum: float
    diffraction: float
    boundary: float


def reduce_angle(dtheta):
    """Representative of dtheta in (-pi, pi] (mod 2*pi)."""
    a = np.asarray(dtheta, dtype=float)
    red = a - 2.0 * np.pi * np.floor((a + np.pi) / (2.0 * np.pi))
    red = np.where(red <= -np.pi, np.pi, red)
    return red if red.ndim else float(red)


def image_angles(A, beta, boundary_eps):
    """Image angles psi_k = beta*A + 2*pi*beta*k and their classification.

    Returns (psi, main_mask, boundary_mask) where psi has a trailing axis
    over the candidate k range; main selects -pi < psi_k < pi away from the
    boundary band, boundary selects |psi_k -+ pi| <= boundary_eps.
    """
    b = _as_beta(beta)
    A = np.asarray(A, dtype=float)
    kmax = int(np.ceil(0.5 / b)) + 1
    k = np.arange(-kmax, kmax + 1)
    psi = b * A[..., None] + 2.0 * np.pi * b * k
    near_pi = np.abs(np.abs(psi) - np.pi) <= boundary_eps
    main = (np.abs(psi) < np.pi) & ~near_pi
    return psi, main, near_pi


# ---------------------------------------------------------------------------
# diffraction integrand
# ---------------------------------------------------------------------------


def _wrap_dist(a):
    """Distance from angle a to 0 mod 2*pi."""
    r = np.abs(np.asarray(a, dtype=float)) % (2.0 * np.pi)
    return np.minimum(r, 2.0 * np.pi - r)


def _critical_distance(A, beta):
    """Angular distance of A to the set where a denominator factor vanishes."""
    c = 1.0 / _as_beta(beta)
    return np.minimum(_wrap_dist(A - np.pi * c), _wrap_dist(A + np.pi * c))


def _signed_critical(A, beta):
    """Signed distance delta to the nearer critical angle and the branch sign.

    With c = 1/beta, A is congruent mod 2*pi to sign*pi*c + delta; the
    denominator factor cosh(c*y) - cos(delta) vanishes at y = 0 as delta -> 0.
    """
    c = 1.0 / _as_beta(beta)
    da = reduce_angle(A - np.pi * c)
    db = reduce_angle(A + np.pi * c)
    use_a = np.abs(da) <= np.abs(db)
    delta = np.where(use_a, da, db)
    sign = np.where(use_a, 1.0, -1.0)
    return delta, sign


def diffraction_ratio(y, A, beta, numerator="reduced", want_dA=False,
                      snap_eps=0.0):
    """Ratio N(y)/D(y) of the diffraction integrand, stable near criticality.

    For the "reduced" reading the numerator is assembled from the exact
    identity N = -2 cos(pi c) sinh^2(cy/2)
                 + cosh(cy) (2 cos(pi c) sin^2(delta/2) + sign sin(pi c) sin(delta)),
    which is cancellation-free and reproduces the 0/0 limit at delta = 0.
    Angles within snap_eps of a critical angle are snapped onto it, selecting
    the centered limit value that pairs with the half-weight boundary terms.
    Broadcasts y against A; with want_dA also returns d(N/D)/dA.
    """
    b = _as_beta(beta)
    c = 1.0 / b
    y = np.asarray(y, dtype=float)
    A = np.asarray(A, dtype=float)
    delta, sign = _signed_critical(A, beta)
    if snap_eps > 0.0:
        delta = np.where(np.abs(delta) <= snap_eps, 0.0, delta)
    far_angle = np.where(sign > 0, A + np.pi * c, A - np.pi * c)
    ch = np.cosh(c * y)
    sh2 = np.sinh(0.5 * c * y) ** 2
    d_near = 2.0 * (sh2 + np.sin(0.5 * delta) ** 2)
    d_far = ch - np.cos(far_angle)
    D = d_near * d_far
    cpc, spc = np.cos(np.pi * c), np.sin(np.pi * c)
    if numerator == "reduced":
        N = -2.0 * cpc * sh2 + ch * (2.0 * cpc * np.sin(0.5 * delta) ** 2
                                     + sign * spc * np.sin(delta))
    elif numerator == "scaled":
        N = cpc - np.cos(b * A) * ch
    else:
        raise ValueError(f"numerator must be one of {NUMERATOR_READINGS}")
    R = N / D
    if not want_dA:
        return R
    if numerator == "reduced":
        N_A = ch * (cpc * np.sin(delta) + sign * spc * np.cos(delta))
    else:
        N_A = b * np.sin(b * A) * ch
    D_A = np.sin(delta) * d_far + np.sin(far_angle) * d_near
    return R, (N_A - R * D_A) / D


def _ratio_bound(A, beta, numerator, degenerate=False):
    """Crude sup bound of |N/D| on [y0, inf) used for tail estimates."""
    # At large y both N and D are dominated by cosh(c*y) powers; |N/D| <= 2
    # once cosh(c*y) >= 2 * max denominator offset.  Near y = 0 the ratio is
    # controlled by the critical distance; callers only use this bound for
    # y >= y_max where the cosh term dominates.
    return 4.0


def _diffraction_prefactor(beta):
    b = _as_beta(beta)
    c = 1.0 / b
    return np.sin(np.pi * c) / (np.pi * b)


def _is_integer_reciprocal(beta, tol=1e-13):
    c = 1.0 / _as_beta(beta)
    return abs(c - round(c)) < tol


# fixed composite Gauss-Legendre grids -------------------------------------

def _panel_nodes(panels):
    """Concatenate Gauss-Legendre nodes/weights over [a, b] panels."""
    ys, ws = [], []
    for a, b, m in panels:
        xg, wg = leggauss(m)
        ys.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * wg)
    return np.concatenate(ys), np.concatenate(ws)


_SMALL_S_PANELS = ((0.0, 1.0, 40), (1.0, 2.5, 28), (2.5, 5.0, 24),
                   (5.0, 10.0, 20), (10.0, 18.0, 16), (18.0, 30.0, 12))
_Y_SMALL, _W_SMALL = _panel_nodes(_SMALL_S_PANELS)

_XI_NODES, _XI_WEIGHTS = _panel_nodes(((0.0, 1.0, 48), (1.0, 9.5, 72)))


def _diffraction_fixed(s, A, beta, numerator, snap_eps=0.0):
    """Fixed-grid diffraction integral for array inputs (shared shape).

    Vectorized over entries; s is bucketed by magnitude so each bucket uses
    a grid adapted to the width of exp(-s*cosh(y)).
    """
    s = np.asarray(s, dtype=float)
    A = np.asarray(A, dtype=float)
    out = np.zeros(s.shape)
    pref = _diffraction_prefactor(beta)

    small = s < 0.5
    if np.any(small):
        y = _Y_SMALL
        integ = np.exp(-s[small, None] * np.cosh(y)) * diffraction_ratio(
            y, A[small, None], beta, numerator, snap_eps=snap_eps)
        out[small] = integ @ _W_SMALL

    big = ~small
    if np.any(big):
        sb = s[big]
        Ab = A[big]
        vals = np.empty(sb.shape)
        # geometric buckets: within each, xi = 2*sinh(y/2) scaled by sqrt(s)
        edges = 0.5 * 4.0 ** np.arange(0, 12)
        idx = np.clip(np.searchsorted(edges, sb, side="right") - 1, 0, len(edges) - 1)
        for bkt in np.unique(idx):
            m = idx == bkt
            s_lo = edges[bkt]
            xi = _XI_NODES * np.sqrt(80.0 / s_lo) / 9.5
            wxi = _XI_WEIGHTS * np.sqrt(80.0 / s_lo) / 9.5
            y = 2.0 * np.arcsinh(0.5 * xi)
            jac = 1.0 / np.sqrt(1.0 + 0.25 * xi**2)
            # exp(-s*cosh y) = exp(-s) * exp(-s*xi^2/2)
            integ = np.exp(-sb[m, None] * (1.0 + 0.5 * xi**2)) * diffraction_ratio(
                y, Ab[m, None], beta, numerator, snap_eps=snap_eps) * jac
            vals[m] = integ @ wxi
        out[big] = vals
    return pref * out


def _near_template(w_hi):
    """Geometric Gauss-Legendre panels, in units of the peak width w.

    Covers [0, 35/w_hi] in w-units so that y = w * template reaches past the
    decay of both exp(-s*cosh y) (s <= 50 on this path) and the ratio tail.
    """
    edges = [0.0, 2.0]
    while edges[-1] * w_hi < 35.0:
        edges.append(edges[-1] * 4.0)
    panels = [(edges[0], edges[1], 16)]
    panels += [(a, b, 12) for a, b in zip(edges[1:-1], edges[2:])]
    return _panel_nodes(panels)


def near_critical_nodes(A, beta, floor=1e-13):
    """Width-scaled quadrature nodes resolving the y = 0 diffraction peak.

    Yields (mask, y_nodes, weights) per width decade; y_nodes has shape
    (masked elements, nodes).
    """
    delta, _ = _signed_critical(np.asarray(A, dtype=float), beta)
    w = np.maximum(np.abs(delta) * _as_beta(beta), floor)
    dec = np.clip(np.floor(np.log10(w)).astype(int), -300, -1)
    for d in np.unique(dec):
        m = dec == d
        nodes, wts = _near_template(10.0 ** (d + 1))
        yield m, w[m, None] * nodes, w[m, None] * wts


def _diffraction_near(s, A, beta, numerator, snap_eps=0.0):
    """Vectorized near-critical diffraction integral.

    The integrand has a peak of width ~ beta*|delta| at y = 0; per-element
    width-scaled geometric panels resolve it.
    """
    s = np.asarray(s, dtype=float)
    A = np.asarray(A, dtype=float)
    out = np.empty(s.shape)
    for m, y, wts in near_critical_nodes(A, beta):
        integ = np.exp(-s[m, None] * np.cosh(y)) * diffraction_ratio(
            y, A[m, None], beta, numerator, snap_eps=snap_eps)
        out[m] = np.sum(integ * wts, axis=-1)
    return _diffraction_prefactor(beta) * out


def diffraction_values(s, A, beta, quad=DEFAULT_QUAD, numerator="reduced"):
    """Diffraction term K(s, beta*A) for array-valued s >= 0, A in (-pi, pi].

    Entries within boundary_eps of a critical angle use the degenerate
    (0/0-resolved) integrand; entries merely near criticality fall back to
    adaptive quadrature element by element.
    """
    if numerator not in NUMERATOR_READINGS:
        raise ValueError(f"numerator must be one of {NUMERATOR_READINGS}")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    A = np.atleast_1d(np.asarray(A, dtype=float))
    s, A = np.broadcast_arrays(s, A)
    if _is_integer_reciprocal(beta):
        return np.zeros(s.shape)
    delta = _critical_distance(A, beta)
    # very large s: the whole diffraction term is below exp(-50) absolutely,
    # and the peak-resolving path would need s-adapted grids; the far grid
    # is accurate enough there.
    near = (delta < _NEAR_CRITICAL) & (s <= 50.0)
    far = ~near

    out = np.empty(s.shape)
    if np.any(far):
        out[far] = _diffraction_fixed(s[far], A[far], beta, numerator,
                                      snap_eps=quad.boundary_eps)
    if np.any(near):
        out[near] = _diffraction_near(s[near], A[near], beta, numerator,
                                      snap_eps=quad.boundary_eps)
    return out


def diffraction_term(s: float, delta_theta: float, beta, quad=DEFAULT_QUAD,
                     numerator: str = "reduced") -> float:
    """Diffraction integral K(s, beta*[delta_theta]) of the cone kernel.

    delta_theta is reduced internally to (-pi, pi].  Raises
    DegenerateAngleError when the reduced angle sits within boundary_eps of
    an image boundary (the kernel's half-weight branch applies there), and
    QuadratureError when the truncation tail at y_max exceeds rel_tol.
    """
    if s < 0:
        raise ValueError("s = r r'/(2t) must be nonnegative")
    A = float(reduce_angle(delta_theta))
    if _is_integer_reciprocal(beta):
        return 0.0
    delta = float(_critical_distance(A, beta))
    if delta <= quad.boundary_eps:
        raise DegenerateAngleError(
            "angle difference lies on an image boundary (beta*[dtheta] = +-pi "
            "mod 2*beta*pi); use the half-weight boundary branch")

    pref = _diffraction_prefactor(beta)

    def f(y):
        return float(np.exp(-s * np.cosh(y)) * diffraction_ratio(
            np.asarray([y]), np.asarray([A]), beta, numerator)[0])

    pts = [p for p in (5.0 * delta * _as_beta(beta), 1.0) if 0.0 < p < quad.y_max]
    val = 0.0
    lo = 0.0
    for p in [*pts, quad.y_max]:
        part, _ = _scipy_quad(f, lo, p, limit=max(quad.y_nodes, 50),
                              epsabs=1e-14, epsrel=1e-11)
        val += part
        lo = p
    val *= pref

    # tail beyond y_max: |ratio| bounded, exp factor decays at least like
    # exp(-s cosh y) and the ratio itself like exp(-y/beta)
    c = 1.0 / _as_beta(beta)
    damp = s * np.sinh(quad.y_max) + c
    tail = abs(pref) * _ratio_bound(A, beta, numerator) \
        * np.exp(-s * np.cosh(quad.y_max)) / damp
    if tail > quad.rel_tol * max(abs(val), 1e-300) + 1e-15:
        raise QuadratureError(
            f"diffraction tail estimate {tail:.3e} exceeds rel_tol", tail)
    return float(val)


# ---------------------------------------------------------------------------
# full kernel
# ---------------------------------------------------------------------------


def brace_parts(s, A, beta, quad=DEFAULT_QUAD, numerator="reduced"):
    """The three brace parts (image_sum, diffraction, boundary) as arrays."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    A = np.atleast_1d(np.asarray(A, dtype=float))
    s, A = np.broadcast_arrays(s, A)
    psi, main, bdry = image_angles(A, beta, quad.boundary_eps)
    img = np.sum(np.where(main, np.exp(np.minimum(s[..., None] * np.cos(psi), 700.0)), 0.0),
                 axis=-1)
    nbd = np.sum(bdry, axis=-1)
    bnd = 0.5 * nbd * np.exp(-s)
    diff = diffraction_values(s, A, beta, quad, numerator)
    return img, diff, bnd


def kernel_total(r, rp, dtheta, R2, t, beta, n, quad=DEFAULT_QUAD,
                 numerator="reduced"):
    """Vectorized heat kernel total for arrays of geometric data.

    r, rp are the radial coordinates, dtheta the (unreduced) angle
    difference, R2 the squared tangential separation |w - w'|^2 and t > 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("time must be positive")
    r = np.asarray(r, dtype=float)
    rp = np.asarray(rp, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    A = reduce_angle(dtheta)
    s = r * rp / (2.0 * t)
    img, diff, bnd = brace_parts(s, A, beta, quad, numerator)
    pref = (4.0 * np.pi * t) ** (-float(n)) * np.exp(-(r**2 + rp**2 + R2) / (4.0 * t))
    return pref * (img + diff + bnd)


def heat_kernel(x: PolarPoint, y: PolarPoint, t: float, beta, n: int = None,
                quad: QuadratureSpec = DEFAULT_QUAD,
                numerator: str = "reduced") -> KernelValue:
    """Heat kernel H(x, y, t) of the model cone, split into its parts.

    The positive total solves the heat equation of the real cone Laplacian
    and integrates to 1 against dV = beta r dr dtheta dw.  See KernelValue
    for the exact assembly of the three parts.
    """
    if t <= 0:
        raise ValueError(f"time must be positive, got {t}")
    if n is None:
        n = x.n
    if x.n != y.n or x.n != n:
        raise ValueError("dimension mismatch between points and n")
    dw = x.w_array() - y.w_array()
    s = x.r * y.r / (2.0 * t)
    A = reduce_angle(x.theta - y.theta)
    img, diff, bnd = brace_parts(np.array([s]), np.array([A]), beta, quad, numerator)
    pref = (4.0 * np.pi * t) ** (-float(n)) \
        * np.exp(-(x.r**2 + y.r**2 + dw @ dw) / (4.0 * t))
    return KernelValue(
        total=float(pref * (img[0] + diff[0] + bnd[0])),
        image_sum=float(img[0]),
        diffraction=float(diff[0]),
        boundary=float(bnd[0]),
    )
