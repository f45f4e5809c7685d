"""Surface and ball quadrature on the unit sphere / unit ball.

Surface nodes are the Lebedev-Laikov sets as tabulated in
``scipy.integrate.lebedev_rule`` (Lebedev & Laikov 1999); radial nodes are
Gauss-Legendre on [0, 1] with the r^2 Jacobian folded into the weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import lebedev_rule

from .errors import QuadratureOrderError

MIN_SURFACE_ORDER = 11
MIN_RADIAL_NODES = 4
DEFAULT_SURFACE_ORDER = 17
DEFAULT_RADIAL_NODES = 8


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    """Unit-sphere surface rule of algebraic ``order`` and a product ball rule.

    ``surface_weights`` sum to 4 pi and ``ball_weights`` to 4 pi / 3; node
    coordinates are for the unit sphere / ball centered at the origin.
    """

    order: int = DEFAULT_SURFACE_ORDER
    radial_nodes: int = DEFAULT_RADIAL_NODES
    surface_nodes: np.ndarray = field(init=False, repr=False)
    surface_weights: np.ndarray = field(init=False, repr=False)
    ball_nodes: np.ndarray = field(init=False, repr=False)
    ball_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.order < MIN_SURFACE_ORDER:
            raise QuadratureOrderError(
                f"surface order {self.order} below the floor {MIN_SURFACE_ORDER}")
        if self.radial_nodes < MIN_RADIAL_NODES:
            raise QuadratureOrderError(
                f"{self.radial_nodes} radial nodes below the floor {MIN_RADIAL_NODES}")
        try:
            x, w = lebedev_rule(self.order)
        except (ValueError, NotImplementedError) as exc:
            raise QuadratureOrderError(f"no Lebedev rule of order {self.order}: {exc}") from None
        s_nodes = np.ascontiguousarray(x.T)
        s_w = np.asarray(w, dtype=float)
        t, gw = np.polynomial.legendre.leggauss(self.radial_nodes)
        r = 0.5 * (t + 1.0)
        rw = 0.5 * gw * r ** 2
        b_nodes = (r[:, None, None] * s_nodes[None]).reshape(-1, 3)
        b_w = (rw[:, None] * s_w[None]).reshape(-1)
        for name, val in (("surface_nodes", s_nodes), ("surface_weights", s_w),
                          ("ball_nodes", b_nodes), ("ball_weights", b_w)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    def refined(self) -> "SphereQuadrature":
        """Rule of roughly double order, used as an accuracy oracle."""
        return SphereQuadrature(_next_supported(2 * self.order + 1), 2 * self.radial_nodes)

    def surface_points(self, center, radius):
        return np.asarray(center, dtype=float) + radius * self.surface_nodes

    def ball_points(self, center, radius):
        return np.asarray(center, dtype=float) + radius * self.ball_nodes

    def surface_average(self, values):
        """Average over the sphere of per-node values with shape (M, ...)."""
        return np.tensordot(self.surface_weights, values, axes=(0, 0)) / (4 * np.pi)

    def ball_average(self, values):
        return np.tensordot(self.ball_weights, values, axes=(0, 0)) / (4 * np.pi / 3)


def _next_supported(order):
    for k in range(order, order + 40):
        try:
            lebedev_rule(k)
            return k
        except ValueError:
            continue
    raise QuadratureOrderError(f"no Lebedev rule at or above order {order}")
