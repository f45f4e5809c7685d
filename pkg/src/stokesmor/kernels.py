"""Closed-form Stokes kernels (viscosity 1) and direct summation loops.

Conventions
-----------
* ``grad[..., i, j]`` is d_j u_i.
* A dipole term of coefficient S on the ball B_R(X) has velocity
  ``R * w_S((x - X) / R)`` where ``w_S`` is the unit-ball simple dipole;
  its strain inside the ball is exactly S.
* Collocation fields use the same radius scaling.
"""
from __future__ import annotations

import os

import numba
import numpy as np
from numba import njit, prange

from .errors import OnSurfaceError, SingularEvaluationError
from .tensors import LEVI_CIVITA, SYM0_BASIS, as_matrix

if "NUMBA_THREADING_LAYER" not in os.environ:
    # TBB shipped with some images is too old and triggers a warning
    numba.config.THREADING_LAYER = "workqueue"

SURFACE_TOL = 1e-12
_EPS_SINGULAR = 1e-300


def _pts(x):
    return np.asarray(x, dtype=float)


# ---------------------------------------------------------------- stokeslet

def stokeslet_velocity(force, source, x):
    """(1/8pi) (F/|r| + r (F.r)/|r|^3), r = x - source."""
    F = _pts(force)
    r = _pts(x) - _pts(source)
    r2 = np.sum(r * r, axis=-1)
    if np.any(r2 <= _EPS_SINGULAR):
        raise SingularEvaluationError(f"stokeslet evaluated at its source {tuple(np.ravel(source))}")
    inv = 1.0 / np.sqrt(r2)
    fr = np.sum(r * F, axis=-1)
    return (F * inv[..., None] + r * (fr * inv ** 3)[..., None]) / (8 * np.pi)


def stokeslet_gradient(force, source, x):
    F = _pts(force)
    r = _pts(x) - _pts(source)
    r2 = np.sum(r * r, axis=-1)
    if np.any(r2 <= _EPS_SINGULAR):
        raise SingularEvaluationError(f"stokeslet evaluated at its source {tuple(np.ravel(source))}")
    inv = 1.0 / np.sqrt(r2)
    i3 = (inv ** 3)[..., None, None]
    i5 = (inv ** 5)[..., None, None]
    fr = np.sum(r * F, axis=-1)[..., None, None]
    rF = r[..., :, None] * F[..., None, :] if F.ndim == r.ndim else r[..., :, None] * F
    Fr = np.swapaxes(rF, -1, -2)
    rr = r[..., :, None] * r[..., None, :]
    g = -Fr * i3 + (np.eye(3) * fr + rF) * i3 - 3 * rr * fr * i5
    return g / (8 * np.pi)


# ----------------------------------------------------------- simple dipole

def _dipole_unit_velocity(S, y):
    r2 = np.sum(y * y, axis=-1)
    a = y @ S.T
    q = np.sum(y * a, axis=-1)
    out = np.array(a, dtype=float)
    ext = r2 > 1.0
    if np.any(ext):
        ye, ae, qe = y[ext], a[ext], q[ext]
        r = np.sqrt(r2[ext])
        r5 = r ** -5
        r7 = r5 / r2[ext]
        out[ext] = (2.5 * ye * (qe * r5)[:, None] + ae * r5[:, None]
                    - 2.5 * ye * (qe * r7)[:, None])
    return out


def _dipole_unit_gradient(S, y):
    """Exterior gradient of w_S at unit coordinates y (|y| > 1)."""
    r2 = np.sum(y * y, axis=-1)
    a = y @ S.T
    q = np.sum(y * a, axis=-1)
    r = np.sqrt(r2)
    r5 = r ** -5
    r7 = r5 / r2
    r9 = r7 / r2
    c_d = (2.5 * q * (r5 - r7))[..., None, None]
    c_ya = (5.0 * (r5 - r7))[..., None, None]
    c_ay = (-5.0 * r7)[..., None, None]
    c_yy = (q * (-12.5 * r7 + 17.5 * r9))[..., None, None]
    ya = y[..., :, None] * a[..., None, :]
    ay = a[..., :, None] * y[..., None, :]
    yy = y[..., :, None] * y[..., None, :]
    return c_d * np.eye(3) + c_ya * ya + S * r5[..., None, None] + c_ay * ay + c_yy * yy


def dipole_velocity(S, center, radius, x):
    """Velocity of the simple dipole of coefficient S centered on the ball B_radius(center).

    Inside the ball the field is the affine map S (x - center); outside it is
    the decaying force- and torque-free Stokes extension.
    """
    S = as_matrix(S)
    x = _pts(x)
    y = (x - _pts(center)) / radius
    flat = y.reshape(-1, 3)
    return (radius * _dipole_unit_velocity(S, flat)).reshape(x.shape)


def dipole_gradient(S, center, radius, x):
    """Analytic gradient of :func:`dipole_velocity`; S itself inside the ball."""
    S = as_matrix(S)
    x = _pts(x)
    y = ((x - _pts(center)) / radius).reshape(-1, 3)
    r2 = np.sum(y * y, axis=-1)
    if np.any(np.abs(r2 - 1.0) <= SURFACE_TOL):
        raise OnSurfaceError("dipole gradient requested on the source sphere surface", index=None)
    out = np.broadcast_to(S, (len(y), 3, 3)).copy()
    ext = r2 > 1.0
    if np.any(ext):
        out[ext] = _dipole_unit_gradient(S, y[ext])
    return out.reshape(x.shape[:-1] + (3, 3))


def strain_kernel(x, S):
    """Symmetric gradient of the leading far-field dipole term (5/2) x (x.Sx)/|x|^5.

    Homogeneous of degree -3 in x.
    """
    S = as_matrix(S)
    x = _pts(x)
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 <= _EPS_SINGULAR):
        raise SingularEvaluationError("strain kernel evaluated at the origin")
    a = x @ S.T
    q = np.sum(x * a, axis=-1)
    r5 = np.sqrt(r2) ** -5
    r7 = r5 / r2
    xa = x[..., :, None] * a[..., None, :]
    xx = x[..., :, None] * x[..., None, :]
    k = 2.5 * ((q * r5)[..., None, None] * np.eye(3)
               + (xa + np.swapaxes(xa, -1, -2)) * r5[..., None, None]
               - 5.0 * xx * (q * r7)[..., None, None])
    return k


def dipole_pressure(S, center, radius, x):
    """Pressure of the exterior dipole (the stresslet part only contributes)."""
    S = as_matrix(S)
    y = (_pts(x) - _pts(center)) / radius
    r2 = np.sum(y * y, axis=-1)
    q = np.sum(y * (y @ S.T), axis=-1)
    return 5.0 * q * np.sqrt(r2) ** -5 / radius


def dipole_ball_average_strain(S, src_center, src_radius, tgt_center, tgt_radius):
    """Exact average of the dipole strain over a ball disjoint from the source ball.

    Stokes velocities are biharmonic, so the ball average of a gradient is
    grad u + (rho^2/10) Hess p at the ball center (p the pressure, Delta u =
    grad p). Vectorized over leading axes of S / centers.
    """
    S = as_matrix(S)
    y = (_pts(tgt_center) - _pts(src_center)) / np.asarray(src_radius)[..., None]
    rho = np.asarray(tgt_radius) / np.asarray(src_radius)
    r2 = np.sum(y * y, axis=-1)
    a = np.einsum("...ij,...j->...i", S, y)
    q = np.sum(y * a, axis=-1)
    r = np.sqrt(r2)
    r5 = r ** -5
    r7 = r5 / r2
    r9 = r7 / r2
    c_d = (2.5 * q * (r5 - r7))[..., None, None]
    ya = y[..., :, None] * a[..., None, :]
    ay = np.swapaxes(ya, -1, -2)
    yy = y[..., :, None] * y[..., None, :]
    grad = (c_d * np.eye(3) + (5.0 * (r5 - r7))[..., None, None] * ya + S * r5[..., None, None]
            - 5.0 * r7[..., None, None] * ay + (q * (-12.5 * r7 + 17.5 * r9))[..., None, None] * yy)
    # Hessian of p = 5 q r^-5 (q harmonic of degree 2)
    hess = 5.0 * (2.0 * S * r5[..., None, None] - 10.0 * (ay + ya) * r7[..., None, None]
                  - 5.0 * (q * r7)[..., None, None] * np.eye(3)
                  + 35.0 * (q * r9)[..., None, None] * yy)
    g = grad + (rho ** 2 / 10.0)[..., None, None] * hess
    return 0.5 * (g + np.swapaxes(g, -1, -2))


# ------------------------------------------------- direct summation (numba)

@njit(cache=True, inline="always")
def _nsum(acc, cmp, c, v):
    s = acc[c]
    t = s + v
    if abs(s) >= abs(v):
        cmp[c] += (s - t) + v
    else:
        cmp[c] += (v - t) + s
    acc[c] = t


@njit(parallel=True, cache=True)
def _dipole_sum(points, centers, radii, coeffs, want_vel, want_grad, vel, grad, hits):
    """Sum all dipole terms at every point, sources in index order (Neumaier-compensated)."""
    P = points.shape[0]
    N = centers.shape[0]
    for p in prange(P):
        acc = np.zeros(12)
        cmp = np.zeros(12)
        x0 = points[p, 0]
        x1 = points[p, 1]
        x2 = points[p, 2]
        hit = -1
        for j in range(N):
            R = radii[j]
            y0 = (x0 - centers[j, 0]) / R
            y1 = (x1 - centers[j, 1]) / R
            y2 = (x2 - centers[j, 2]) / R
            r2 = y0 * y0 + y1 * y1 + y2 * y2
            s00 = coeffs[j, 0, 0]
            s01 = coeffs[j, 0, 1]
            s02 = coeffs[j, 0, 2]
            s11 = coeffs[j, 1, 1]
            s12 = coeffs[j, 1, 2]
            s22 = coeffs[j, 2, 2]
            a0 = s00 * y0 + s01 * y1 + s02 * y2
            a1 = s01 * y0 + s11 * y1 + s12 * y2
            a2 = s02 * y0 + s12 * y1 + s22 * y2
            if want_grad and abs(r2 - 1.0) <= 1e-12:
                if hit < 0:
                    hit = j
                continue
            if r2 <= 1.0:
                if want_vel:
                    _nsum(acc, cmp, 0, R * a0)
                    _nsum(acc, cmp, 1, R * a1)
                    _nsum(acc, cmp, 2, R * a2)
                if want_grad:
                    _nsum(acc, cmp, 3, s00)
                    _nsum(acc, cmp, 4, s01)
                    _nsum(acc, cmp, 5, s02)
                    _nsum(acc, cmp, 6, s01)
                    _nsum(acc, cmp, 7, s11)
                    _nsum(acc, cmp, 8, s12)
                    _nsum(acc, cmp, 9, s02)
                    _nsum(acc, cmp, 10, s12)
                    _nsum(acc, cmp, 11, s22)
                continue
            q = y0 * a0 + y1 * a1 + y2 * a2
            ir2 = 1.0 / r2
            r5 = ir2 * ir2 / np.sqrt(r2)
            r7 = r5 * ir2
            if want_vel:
                cy = 2.5 * q * (r5 - r7)
                _nsum(acc, cmp, 0, R * (cy * y0 + a0 * r5))
                _nsum(acc, cmp, 1, R * (cy * y1 + a1 * r5))
                _nsum(acc, cmp, 2, R * (cy * y2 + a2 * r5))
            if want_grad:
                r9 = r7 * ir2
                cd = 2.5 * q * (r5 - r7)
                cya = 5.0 * (r5 - r7)
                cay = -5.0 * r7
                cyy = q * (-12.5 * r7 + 17.5 * r9)
                y = (y0, y1, y2)
                a = (a0, a1, a2)
                for i in range(3):
                    for k in range(3):
                        v = cya * y[i] * a[k] + cay * a[i] * y[k] + cyy * y[i] * y[k] + coeffs[j, i, k] * r5
                        if i == k:
                            v += cd
                        _nsum(acc, cmp, 3 + 3 * i + k, v)
        for c in range(3):
            vel[p, c] = acc[c] + cmp[c]
        for c in range(9):
            grad[p, c] = acc[3 + c] + cmp[3 + c]
        hits[p] = hit


@njit(parallel=True, cache=True)
def _dipole_strain_sum(points, centers, radii, coeffs, out, hits):
    """Strain-only variant of :func:`_dipole_sum` (xx, xy, xz, yy, yz, zz)."""
    P = points.shape[0]
    N = centers.shape[0]
    for p in prange(P):
        acc = np.zeros(6)
        cmp = np.zeros(6)
        x0 = points[p, 0]
        x1 = points[p, 1]
        x2 = points[p, 2]
        hit = -1
        for j in range(N):
            R = radii[j]
            y0 = (x0 - centers[j, 0]) / R
            y1 = (x1 - centers[j, 1]) / R
            y2 = (x2 - centers[j, 2]) / R
            r2 = y0 * y0 + y1 * y1 + y2 * y2
            s00 = coeffs[j, 0, 0]
            s01 = coeffs[j, 0, 1]
            s02 = coeffs[j, 0, 2]
            s11 = coeffs[j, 1, 1]
            s12 = coeffs[j, 1, 2]
            s22 = coeffs[j, 2, 2]
            if abs(r2 - 1.0) <= 1e-12:
                if hit < 0:
                    hit = j
                continue
            if r2 < 1.0:
                _nsum(acc, cmp, 0, s00)
                _nsum(acc, cmp, 1, s01)
                _nsum(acc, cmp, 2, s02)
                _nsum(acc, cmp, 3, s11)
                _nsum(acc, cmp, 4, s12)
                _nsum(acc, cmp, 5, s22)
                continue
            a0 = s00 * y0 + s01 * y1 + s02 * y2
            a1 = s01 * y0 + s11 * y1 + s12 * y2
            a2 = s02 * y0 + s12 * y1 + s22 * y2
            q = y0 * a0 + y1 * a1 + y2 * a2
            ir2 = 1.0 / r2
            r5 = ir2 * ir2 / np.sqrt(r2)
            r7 = r5 * ir2
            r9 = r7 * ir2
            cd = 2.5 * q * (r5 - r7)
            cs = 2.5 * r5 - 5.0 * r7
            cyy = q * (-12.5 * r7 + 17.5 * r9)
            _nsum(acc, cmp, 0, cd + s00 * r5 + 2.0 * cs * y0 * a0 + cyy * y0 * y0)
            _nsum(acc, cmp, 1, s01 * r5 + cs * (y0 * a1 + y1 * a0) + cyy * y0 * y1)
            _nsum(acc, cmp, 2, s02 * r5 + cs * (y0 * a2 + y2 * a0) + cyy * y0 * y2)
            _nsum(acc, cmp, 3, cd + s11 * r5 + 2.0 * cs * y1 * a1 + cyy * y1 * y1)
            _nsum(acc, cmp, 4, s12 * r5 + cs * (y1 * a2 + y2 * a1) + cyy * y1 * y2)
            _nsum(acc, cmp, 5, cd + s22 * r5 + 2.0 * cs * y2 * a2 + cyy * y2 * y2)
        for c in range(6):
            out[p, c] = acc[c] + cmp[c]
        hits[p] = hit


_SYM_IDX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def sum_dipoles(points, centers, radii, coeffs, velocity=True, gradient=True):
    """Velocity (P, 3) and gradient (P, 3, 3) of a dipole ensemble at points."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    P = len(pts)
    vel = np.zeros((P, 3))
    grad = np.zeros((P, 9))
    hits = np.full(P, -1, dtype=np.int64)
    if len(radii):
        _dipole_sum(pts, np.ascontiguousarray(centers, dtype=float),
                    np.ascontiguousarray(radii, dtype=float),
                    np.ascontiguousarray(coeffs, dtype=float),
                    bool(velocity), bool(gradient), vel, grad, hits)
    if gradient:
        _raise_on_hits(hits)
    return vel, grad.reshape(P, 3, 3)


def sum_dipole_strains(points, centers, radii, coeffs):
    """Strain (P, 3, 3) of a dipole ensemble; cheaper than :func:`sum_dipoles`."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    P = len(pts)
    out = np.zeros((P, 6))
    hits = np.full(P, -1, dtype=np.int64)
    if len(radii):
        _dipole_strain_sum(pts, np.ascontiguousarray(centers, dtype=float),
                           np.ascontiguousarray(radii, dtype=float),
                           np.ascontiguousarray(coeffs, dtype=float), out, hits)
    _raise_on_hits(hits)
    e = np.empty((P, 3, 3))
    for c, (i, k) in enumerate(_SYM_IDX):
        e[:, i, k] = out[:, c]
        e[:, k, i] = out[:, c]
    return e


def _raise_on_hits(hits):
    bad = np.nonzero(hits >= 0)[0]
    if bad.size:
        j = int(hits[bad[0]])
        raise OnSurfaceError(f"gradient requested on the surface of particle {j}", index=j)


# -------------------------------------------------- collocation basis

def _traceless_cubic_tensors():
    """Seven symmetric traceless rank-3 tensors (harmonic cubics), Gram-Schmidt in fixed order."""
    cands = []
    for a in range(3):
        for b in range(a, 3):
            for c in range(b, 3):
                t = np.zeros((3, 3, 3))
                for i, j, k in {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}:
                    t[i, j, k] = 1.0
                tr = np.einsum("iik->k", t)
                d = np.eye(3)
                t = t - (np.einsum("ij,k->ijk", d, tr) + np.einsum("ik,j->ijk", d, tr)
                         + np.einsum("jk,i->ijk", d, tr)) / 5.0
                cands.append(t)
    basis = []
    for t in cands:
        v = t.copy()
        for b in basis:
            v -= np.sum(v * b) * b
        nv = np.sqrt(np.sum(v * v))
        if nv > 1e-8:
            basis.append(v / nv)
    assert len(basis) == 7
    return np.array(basis)


CUBIC_BASIS = _traceless_cubic_tensors()


def _harmonics(l, y, tensors):
    """Solid harmonics of degree l defined by ``tensors`` (m, 3[, 3[, 3]]).

    Returns values (P, m), gradients (P, m, 3) and Hessians (P, m, 3, 3).
    """
    P = len(y)
    m = len(tensors)
    if l == 1:
        h = y @ tensors.T
        g = np.broadcast_to(tensors, (P, m, 3)).copy()
        H = np.zeros((P, m, 3, 3))
    elif l == 2:
        Ay = np.einsum("mij,pj->pmi", tensors, y)
        h = np.einsum("pi,pmi->pm", y, Ay)
        g = 2.0 * Ay
        H = np.broadcast_to(2.0 * tensors, (P, m, 3, 3)).copy()
    elif l == 3:
        Tyy = np.einsum("mijk,pj,pk->pmi", tensors, y, y)
        h = np.einsum("pi,pmi->pm", y, Tyy)
        g = 3.0 * Tyy
        H = 6.0 * np.einsum("mija,pa->pmij", tensors, y)
    else:
        raise ValueError(l)
    return h, g, H


N_COLLOCATION = 27
# (kind, harmonic degree, slice of the coefficient vector, harmonic tensors)
COLLOCATION_CLASSES = (
    ("potential", 1, slice(0, 3), np.eye(3)),
    ("toroidal", 2, slice(3, 8), SYM0_BASIS),
    ("pressure", 3, slice(8, 15), CUBIC_BASIS),
    ("potential", 2, slice(15, 20), SYM0_BASIS),
    ("potential", 3, slice(20, 27), CUBIC_BASIS),
)
# fields decaying like |y|^-3; the rest decay faster
SLOW_SLICE = slice(0, 15)


def _class_fields(kind, l, y, r, tensors, gradient):
    """Velocities (P, m, 3) and gradients (P, m, 3, 3) of one family of exterior fields."""
    h, g, H = _harmonics(l, y, tensors)
    I = np.eye(3)
    yy = y[:, None, :, None] * y[:, None, None, :]
    r5 = (r ** -5)[:, None]
    r7 = (r ** -7)[:, None]
    grad = None
    if kind == "potential":
        # grad(h / r^(2l+1))
        n = 2 * l + 1
        rn = (r ** -n)[:, None]
        rn2 = (r ** (-n - 2))[:, None]
        vel = g * rn[..., None] - n * (h * rn2)[..., None] * y[:, None, :]
        if gradient:
            gy = g[..., :, None] * y[:, None, None, :]
            grad = (H * rn[..., None, None]
                    - n * (gy + np.swapaxes(gy, -1, -2)) * rn2[..., None, None]
                    - n * (h * rn2)[..., None, None] * I
                    + n * (n + 2) * (h * (r ** (-n - 4))[:, None])[..., None, None] * yy)
    elif kind == "toroidal":
        # y x grad h / r^5
        yxg = np.cross(y[:, None, :], g)
        vel = yxg * r5[..., None]
        if gradient:
            t1 = np.einsum("ijb,pmb->pmij", LEVI_CIVITA, g)
            t2 = np.einsum("iab,pa,pmbj->pmij", LEVI_CIVITA, y, H)
            grad = ((t1 + t2) * r5[..., None, None]
                    - 5.0 * yxg[..., :, None] * y[:, None, None, :] * r7[..., None, None])
    else:
        # pressure h / r^7 with u = -(1/30) grad h / r^5 + (1/2) h y / r^7
        r9 = (r ** -9)[:, None]
        vel = -g * r5[..., None] / 30.0 + 0.5 * (h * r7)[..., None] * y[:, None, :]
        if gradient:
            gy = g[..., :, None] * y[:, None, None, :]
            grad = (-(H * r5[..., None, None] - 5.0 * gy * r7[..., None, None]) / 30.0
                    + 0.5 * (np.swapaxes(gy, -1, -2) * r7[..., None, None]
                             + (h * r7)[..., None, None] * I
                             - 7.0 * (h * r9)[..., None, None] * yy))
    return vel, grad


def collocation_basis(y, gradient=True):
    """Exterior basis fields at unit coordinates y (P, 3), |y| > 1.

    Order: potential dipoles (3), l=2 toroidal (5), l=3 pressure-driven (7)
    -- together the span of second derivatives of the point force, decaying
    like |y|^-3 -- then potential quadrupoles (5) and octupoles (7). All are
    force- and torque-free homogeneous Stokes solutions.

    Returns velocities (P, 27, 3) and gradients (P, 27, 3, 3) or None.
    """
    y = np.asarray(y, dtype=float).reshape(-1, 3)
    r = np.sqrt(np.sum(y * y, axis=1))
    vel = np.empty((len(y), N_COLLOCATION, 3))
    grad = np.empty((len(y), N_COLLOCATION, 3, 3)) if gradient else None
    for kind, l, sl, tensors in COLLOCATION_CLASSES:
        v, g = _class_fields(kind, l, y, r, tensors, gradient)
        vel[:, sl] = v
        if gradient:
            grad[:, sl] = g
    return vel, grad


def collocation_field(coeffs, y, gradient=True):
    """Sum of the basis fields weighted by ``coeffs`` (27,): (P, 3) and (P, 3, 3) or None.

    Each family is linear in its harmonic tensor, so the weights are folded
    into one tensor per family before evaluation.
    """
    y = np.asarray(y, dtype=float).reshape(-1, 3)
    c = np.asarray(coeffs, dtype=float)
    r = np.sqrt(np.sum(y * y, axis=1))
    vel = np.zeros((len(y), 3))
    grad = np.zeros((len(y), 3, 3)) if gradient else None
    for kind, l, sl, tensors in COLLOCATION_CLASSES:
        w = c[sl]
        if not np.any(w):
            continue
        combined = np.tensordot(w, tensors, axes=(0, 0))[None]
        v, g = _class_fields(kind, l, y, r, combined, gradient)
        vel += v[:, 0]
        if gradient:
            grad += g[:, 0]
    return vel, grad


def quadratic_interior(Q, y, gradient=True):
    """Interior polynomial q(y) = Q(y, y) - (1/3) sum_a Q[:, a, a] and its gradient.

    Q has shape (..., 3, 3, 3), symmetric in the last two axes; y is (P, 3)
    and leading axes of Q broadcast against P.
    """
    y = np.asarray(y, dtype=float)
    mean = np.einsum("...iaa->...i", Q) / 3.0
    val = np.einsum("...iab,...a,...b->...i", Q, y, y) - mean
    if not gradient:
        return val, None
    return val, 2.0 * np.einsum("...ija,...a->...ij", Q, y)
