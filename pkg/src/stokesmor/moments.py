"""Per-particle projections: rigid part, simple-dipole part, collocation remainder.

All ball and surface averages use analytic velocities/gradients sampled at
the nodes of a :class:`SphereQuadrature`; quadrature error is the only
discretization error.
"""
from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import IllConditionedError, InvalidInputError
from .fields import CollocationTerm, DipoleTerm, FlowField, RigidMotion
from .quadrature import SphereQuadrature
from .tensors import TracelessSym3, curl_from_gradient, sym_traceless

MAX_CONDITION = 1e8
_BALL_VOLUME = 4.0 * np.pi / 3.0


def _check_index(fld: FlowField, i):
    if not 0 <= i < fld.n:
        raise InvalidInputError(f"particle index {i} out of range for {fld.n} particles")


def rigid_projection(fld: FlowField, i: int, quad: SphereQuadrature) -> RigidMotion:
    """V = surface average of velocity, omega = half the ball average of the curl."""
    _check_index(fld, i)
    c, r = fld.centers[i], fld.radii[i]
    V = quad.surface_average(fld.velocity(quad.surface_points(c, r)))
    _, g = fld.velocity_and_gradient(quad.ball_points(c, r))
    omega = 0.5 * quad.ball_average(curl_from_gradient(g))
    return RigidMotion(V, omega, c)


def dipole_coefficient(fld: FlowField, i: int, quad: SphereQuadrature) -> TracelessSym3:
    """Ball average of the strain, projected onto symmetric traceless matrices."""
    _check_index(fld, i)
    e = fld.strain(quad.ball_points(fld.centers[i], fld.radii[i]))
    return TracelessSym3.from_matrix(quad.ball_average(e))


def apply_Qd(fld: FlowField, i: int, quad: SphereQuadrature) -> DipoleTerm:
    """Simple-dipole part of the particle projection of ``fld``."""
    return DipoleTerm(fld.centers[i], float(fld.radii[i]), dipole_coefficient(fld, i, quad))


class QProjection(NamedTuple):
    """Output of :func:`apply_Q_collocation`.

    ``fit_residual`` is the surface RMS of the boundary data not represented
    by the returned terms, relative to the particle radius (unit coordinates).
    """

    dipole: DipoleTerm
    remainder: CollocationTerm | None
    rigid: RigidMotion
    fit_residual: float


@lru_cache(maxsize=8)
def _collocation_operators(order: int, radial: int):
    """Precomputed least-squares maps for one quadrature rule.

    Returns (ball quadratic fit map (10, Mb), surface basis fit map
    (27, 3 Ms), sqrt surface weights, surface basis matrix (3 Ms, 27)).
    """
    quad = SphereQuadrature(order, radial)
    yb = quad.ball_nodes
    cols = [np.ones(len(yb))] + [yb[:, a] for a in range(3)]
    cols += [yb[:, a] * yb[:, b] for a in range(3) for b in range(a, 3)]
    phi = np.stack(cols, axis=1)
    sw = np.sqrt(quad.ball_weights)[:, None]
    fit_ball = np.linalg.pinv(sw * phi) * sw.T
    ys = quad.surface_nodes
    basis, _ = kernels.collocation_basis(ys, gradient=False)
    ssw = np.sqrt(quad.surface_weights)
    mat = (basis.transpose(0, 2, 1) * ssw[:, None, None]).reshape(-1, kernels.N_COLLOCATION)
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedError(
            f"collocation basis condition number {cond:.3g} exceeds {MAX_CONDITION:g}; "
            "use a finer surface rule or reduce the degree to 1")
    fit_surf = np.linalg.pinv(mat)
    return fit_ball, fit_surf, ssw, mat


_PAIRS = [(a, b) for a in range(3) for b in range(a, 3)]


def _quadratic_tensor(coef):
    """(…, 10, 3) monomial coefficients -> symmetric (…, 3, 3, 3) tensor Q_iab."""
    Q = np.zeros(coef.shape[:-2] + (3, 3, 3))
    for k, (a, b) in enumerate(_PAIRS):
        c = coef[..., 4 + k, :]
        if a == b:
            Q[..., :, a, a] = c
        else:
            Q[..., :, a, b] = 0.5 * c
            Q[..., :, b, a] = 0.5 * c
    return Q


def boundary_data(surf_vel, V, omega, dipoles, quad):
    """w - P_i w - S y on the unit-sphere nodes, per particle (unit coordinates)."""
    ys = quad.surface_nodes
    return (surf_vel - V[:, None, :] - np.cross(omega[:, None, :], ys[None])
            - np.einsum("nij,mj->nmi", dipoles, ys))


def _surface_rms(g, quad):
    return np.sqrt(np.einsum("m,nmi,nmi->n", quad.surface_weights, g, g) / (4 * np.pi))


def fit_remainders(ball_vel, surf_vel, V, omega, dipoles, quad):
    """Quadratic remainder fits for a batch of particles.

    ``ball_vel`` (N, Mb, 3) and ``surf_vel`` (N, Ms, 3) are velocities in
    unit coordinates (divided by the radius), V (N, 3) and omega (N, 3) the
    rigid projection in the same units. The interior remainder is the
    mean-free quadratic part of a least-squares fit over the ball nodes; its
    boundary values are matched by the exterior basis. Returns (interior
    tensors (N, 3, 3, 3), exterior coefficients (N, 27), surface RMS of the
    boundary data left unrepresented (N,)).
    """
    fit_ball, fit_surf, ssw, mat = _collocation_operators(quad.order, quad.radial_nodes)
    coef = np.einsum("km,nmi->nki", fit_ball, ball_vel)
    Q = _quadratic_tensor(coef)
    ys = quad.surface_nodes
    qv, _ = kernels.quadratic_interior(Q[:, None], ys[None], gradient=False)
    c = (qv * ssw[None, :, None]).reshape(len(Q), -1) @ fit_surf.T
    fitted = (c @ mat.T).reshape(qv.shape) / ssw[None, :, None]
    g = boundary_data(surf_vel, V, omega, dipoles, quad)
    return Q, c, _surface_rms(g - fitted, quad)


def dipole_only_residual(surf_vel, V, omega, dipoles, quad):
    """Surface RMS of w - P_i w - S y in unit coordinates, for each particle."""
    return _surface_rms(boundary_data(surf_vel, V, omega, dipoles, quad), quad)


def apply_Q_collocation(fld: FlowField, i: int, degree: int, quad: SphereQuadrature) -> QProjection:
    """Approximate the full particle projection by a finite exterior basis.

    Degree 1 keeps only the simple dipole (identical to :func:`apply_Qd`).
    Degree 2 also fits the mean-free quadratic part of the interior data and
    extends it by 27 decaying force- and torque-free Stokes fields. The
    dipole coefficient always comes from the exact ball average.
    """
    if degree not in (1, 2):
        raise InvalidInputError(f"degree must be 1 or 2, got {degree}")
    _check_index(fld, i)
    c, r = fld.centers[i], fld.radii[i]
    rigid = rigid_projection(fld, i, quad)
    dip = apply_Qd(fld, i, quad)
    surf_vel = fld.velocity(quad.surface_points(c, r))[None] / r
    V = (np.asarray(rigid.V) / r)[None]
    omega = np.asarray(rigid.omega)[None]
    S = dip.coefficient.matrix[None]
    if degree == 1:
        res = dipole_only_residual(surf_vel, V, omega, S, quad)
        return QProjection(dip, None, rigid, float(res[0]))
    ball_vel = fld.velocity(quad.ball_points(c, r))[None] / r
    Q, coef, res = fit_remainders(ball_vel, surf_vel, V, omega, S, quad)
    term = CollocationTerm(c, float(r), coef[0], Q[0])
    return QProjection(dip, term, rigid, float(res[0]))


class BallMoments(NamedTuple):
    """Per-particle strain moments from one pass over all ball nodes."""

    dipoles: np.ndarray        # (N, 3, 3) ball-averaged strain, traceless-projected
    strain_power: np.ndarray   # (N,) integral over B_i of |e|_F^q
    moment_power: np.ndarray   # (N,) |B_i| * |average strain|_F^q


def ball_moments(fld: FlowField, quad: SphereQuadrature, q: float = 2.0) -> BallMoments:
    """Ball-averaged strains and L^q strain integrals for every particle at once."""
    n = fld.n
    M = len(quad.ball_weights)
    pts = (fld.centers[:, None, :] + fld.radii[:, None, None] * quad.ball_nodes[None]).reshape(-1, 3)
    e = fld.strain(pts).reshape(n, M, 3, 3)
    avg = np.einsum("m,nmij->nij", quad.ball_weights, e) / _BALL_VOLUME
    S = sym_traceless(avg)
    vol = _BALL_VOLUME * fld.radii ** 3
    mag = np.sqrt(np.einsum("nmij,nmij->nm", e, e))
    strain_power = fld.radii ** 3 * (mag ** q @ quad.ball_weights)
    moment_power = vol * np.sqrt(np.einsum("nij,nij->n", S, S)) ** q
    return BallMoments(S, strain_power, moment_power)


class CollocationMoments(NamedTuple):
    """Degree-2 per-particle data from one pass over ball and surface nodes."""

    dipoles: np.ndarray        # (N, 3, 3)
    interior: np.ndarray       # (N, 3, 3, 3)
    coefficients: np.ndarray   # (N, 27)
    fit_residuals: np.ndarray  # (N,)
    strain_power: np.ndarray   # (N,)
    moment_power: np.ndarray   # (N,)


def collocation_moments(fld: FlowField, quad: SphereQuadrature, q: float = 2.0) -> CollocationMoments:
    """Dipole coefficients, quadratic remainder fits and strain integrals for every particle."""
    n = fld.n
    Mb = len(quad.ball_weights)
    Ms = len(quad.surface_weights)
    bp = (fld.centers[:, None, :] + fld.radii[:, None, None] * quad.ball_nodes[None]).reshape(-1, 3)
    sp = (fld.centers[:, None, :] + fld.radii[:, None, None] * quad.surface_nodes[None]).reshape(-1, 3)
    bv, bg = fld.velocity_and_gradient(bp)
    sv = fld.velocity(sp)
    r = fld.radii[:, None, None]
    bv = bv.reshape(n, Mb, 3) / r
    sv = sv.reshape(n, Ms, 3) / r
    bg = bg.reshape(n, Mb, 3, 3)
    avg = np.einsum("m,nmij->nij", quad.ball_weights, bg) / _BALL_VOLUME
    S = sym_traceless(avg)
    V = np.einsum("m,nmi->ni", quad.surface_weights, sv) / (4 * np.pi)
    omega = 0.5 * curl_from_gradient(avg)
    Q, coef, res = fit_remainders(bv, sv, V, omega, S, quad)
    e = 0.5 * (bg + np.swapaxes(bg, -1, -2))
    mag = np.sqrt(np.einsum("nmij,nmij->nm", e, e))
    strain_power = fld.radii ** 3 * (mag ** q @ quad.ball_weights)
    moment_power = _BALL_VOLUME * fld.radii ** 3 * np.sqrt(np.einsum("nij,nij->n", S, S)) ** q
    return CollocationMoments(S, Q, coef, res, strain_power, moment_power)
