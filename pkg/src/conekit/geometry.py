"""Model-space primitives for the flat cone C_beta x R^(2n-2).

The model metric in singular polar coordinates (r, theta, w) is

    dr^2 + beta^2 r^2 dtheta^2 + |dw|^2,

where r is the distance to the singular axis {r = 0}, theta in [0, 2*pi)
is the holomorphic angle, and w collects the 2n-2 real tangential
coordinates.  Everything here is exact (no quadrature): distances,
volume density, coordinate transforms, similarity rescaling, and the
catalogs of second-order derivative operators used by the singular
integral machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConeAngle",
    "PolarPoint",
    "DerivOp",
    "T_FAMILY",
    "M_FAMILY",
    "cone_distance",
    "volume_element",
    "holomorphic_to_polar",
    "polar_to_holomorphic",
    "rescale_coordinates",
    "ball_volume_mc",
]


@dataclass(frozen=True)
class ConeAngle:
    """Cone parameter beta in (0, 1]; the total cone angle is 2*pi*beta.

    beta = 1 is the Euclidean degenerate case, used as an oracle throughout.
    """

    beta: float

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"cone angle parameter must lie in (0, 1], got {self.beta}")

    def __float__(self) -> float:
        return self.beta


def _as_beta(beta) -> float:
    """Accept either a bare float or a ConeAngle; validate the range."""
    b = float(beta)
    if not (0.0 < b <= 1.0):
        raise ValueError(f"cone angle parameter must lie in (0, 1], got {b}")
    return b


@dataclass(frozen=True)
class PolarPoint:
    """A point (r, theta, w) of the model cone in singular polar coordinates.

    r >= 0 is the distance to the axis (r = |z|^beta in holomorphic terms),
    theta is normalized to [0, 2*pi) and set to 0 on the axis by convention,
    and w is the tuple of 2n-2 real tangential coordinates.
    """

    r: float
    theta: float
    w: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.r < 0:
            raise ValueError(f"radial coordinate must be nonnegative, got {self.r}")
        th = 0.0 if self.r == 0.0 else float(self.theta) % (2.0 * np.pi)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "w", tuple(float(c) for c in self.w))

    @property
    def n(self) -> int:
        """Complex dimension of the ambient model space."""
        return 1 + len(self.w) // 2

    def w_array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=float)

    def to_json(self) -> list:
        """Serialize as the flat array [r, theta, w...]."""
        return [self.r, self.theta, *self.w]

    @classmethod
    def from_json(cls, data) -> "PolarPoint":
        data = list(map(float, data))
        return cls(data[0], data[1], tuple(data[2:]))


_T_TAGS = ("wr", "ww", "wtheta")
_M_TAGS = ("r_y", "theta_y", "x_y")


@dataclass(frozen=True)
class DerivOp:
    """A second-order derivative operator from the catalogs T or M.

    Family "T" (both legs on the x argument, never purely normal):
        tag "wr"     : d^2/dw_i dr
        tag "ww"     : d^2/dw_i dw_j
        tag "wtheta" : (1/r) d^2/dw_i dtheta
    Family "M" (legs split across the two kernel arguments; j indexes a
    tangential direction of the *other* argument):
        tag "r_y"     : d^2/dr_x dy_j
        tag "theta_y" : (1/r_x) d^2/dtheta_x dy_j
        tag "x_y"     : d^2/dx_i dy_j
    Indices are 0-based tangential indices in 0..2n-3.
    """

    tag: str
    i: int = 0
    j: int = 0

    def __post_init__(self):
        if self.tag not in _T_TAGS + _M_TAGS:
            raise ValueError(f"unknown derivative tag {self.tag!r}")
        if self.i < 0 or self.j < 0:
            raise ValueError("tangential indices must be nonnegative")

    @property
    def family(self) -> str:
        return "T" if self.tag in _T_TAGS else "M"

    def validate(self, n: int):
        dim = 2 * n - 2
        used = {"wr": (self.i,), "wtheta": (self.i,), "ww": (self.i, self.j),
                "r_y": (self.j,), "theta_y": (self.j,), "x_y": (self.i, self.j)}[self.tag]
        for idx in used:
            if idx >= dim:
                raise ValueError(f"tangential index {idx} out of range for n={n}")


def T_FAMILY(n: int) -> list:
    """All operators of the family T for complex dimension n (empty at n=1)."""
    dim = 2 * n - 2
    ops = [DerivOp("wr", i) for i in range(dim)]
    ops += [DerivOp("ww", i, j) for i in range(dim) for j in range(i, dim)]
    ops += [DerivOp("wtheta", i) for i in range(dim)]
    return ops


def M_FAMILY(n: int) -> list:
    """All operators of the family M (one leg per kernel argument)."""
    dim = 2 * n - 2
    ops = [DerivOp("r_y", j=j) for j in range(dim)]
    ops += [DerivOp("theta_y", j=j) for j in range(dim)]
    ops += [DerivOp("x_y", i, j) for i in range(dim) for j in range(dim)]
    return ops


def _check_same_n(x: PolarPoint, y: PolarPoint):
    if len(x.w) != len(y.w):
        raise ValueError(f"dimension mismatch: {len(x.w)} vs {len(y.w)} tangential coordinates")


def cone_distance(x: PolarPoint, y: PolarPoint, beta) -> float:
    """Geodesic distance of the product metric cone x Euclidean.

    The 2D cone factor uses the law of cosines on the unrolled sector: with
    psi the minimal arc angle beta*|dtheta| reduced mod 2*pi*beta, the slice
    distance is sqrt(r^2 + r'^2 - 2 r r' cos(psi)) for psi <= pi and r + r'
    otherwise (the latter branch is reachable only at beta = 1 ties, where
    both branches agree).
    """
    b = _as_beta(beta)
    _check_same_n(x, y)
    dtheta = abs(x.theta - y.theta) % (2.0 * np.pi)
    dtheta = min(dtheta, 2.0 * np.pi - dtheta)
    psi = b * dtheta
    if psi <= np.pi:
        d2_cone = x.r * x.r + y.r * y.r - 2.0 * x.r * y.r * np.cos(psi)
        d2_cone = max(d2_cone, 0.0)
    else:
        d2_cone = (x.r + y.r) ** 2
    dw = x.w_array() - y.w_array()
    return float(np.sqrt(d2_cone + dw @ dw))


def volume_element(x: PolarPoint, beta) -> float:
    """Volume density beta*r of dV = beta * r dr dtheta dw at the point."""
    return _as_beta(beta) * x.r


def holomorphic_to_polar(z: complex, w=(), beta=1.0) -> PolarPoint:
    """Map the holomorphic normal coordinate z to (r, theta): r = |z|^beta."""
    b = _as_beta(beta)
    az = abs(z)
    if az == 0.0:
        return PolarPoint(0.0, 0.0, tuple(w))
    theta = float(np.angle(z)) % (2.0 * np.pi)
    return PolarPoint(az**b, theta, tuple(w))


def polar_to_holomorphic(x: PolarPoint, beta) -> tuple:
    """Inverse transform: returns (z, w) with |z| = r^(1/beta)."""
    b = _as_beta(beta)
    z = 0.0j if x.r == 0.0 else x.r ** (1.0 / b) * np.exp(1j * x.theta)
    return complex(z), x.w


def rescale_coordinates(x: PolarPoint, lam: float, beta=None) -> PolarPoint:
    """Similarity (lambda*r, theta, lambda*w); cone distances scale by lambda.

    In holomorphic terms this is z -> lambda^(1/beta) z, w -> lambda w.
    """
    if lam <= 0:
        raise ValueError(f"scale factor must be positive, got {lam}")
    return PolarPoint(lam * x.r, x.theta, tuple(lam * c for c in x.w))


def ball_volume_mc(center: PolarPoint, radius: float, beta, n: int,
                   samples: int = 200_000, seed: int = 0) -> float:
    """Monte-Carlo volume of a cone-metric ball, for irregular-domain checks.

    Samples uniformly from a polar-coordinate bounding box and weights by
    the density beta*r.  Intended as an oracle, not a production integrator.
    """
    b = _as_beta(beta)
    rng = np.random.default_rng(seed)
    dim = 2 * n - 2
    r_hi = center.r + radius
    r = rng.uniform(0.0, r_hi, samples)
    theta = rng.uniform(0.0, 2.0 * np.pi, samples)
    box_vol = r_hi * 2.0 * np.pi
    if dim:
        cw = center.w_array()
        w = rng.uniform(-radius, radius, (samples, dim)) + cw
        box_vol *= (2.0 * radius) ** dim
        dw2 = np.sum((w - cw) ** 2, axis=1)
    else:
        dw2 = 0.0
    # squared slice distance to the center, vectorized copy of cone_distance
    dth = np.abs(theta - center.theta) % (2.0 * np.pi)
    dth = np.minimum(dth, 2.0 * np.pi - dth)
    d2 = r**2 + center.r**2 - 2.0 * r * center.r * np.cos(b * dth) + dw2
    inside = d2 <= radius**2
    return float(np.mean(np.where(inside, b * r, 0.0)) * box_vol)
