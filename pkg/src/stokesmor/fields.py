"""Ambient flows, per-particle radiated terms and the composite flow field.

Viscosity is 1 and the momentum equation is read as -Delta u + grad p = f.
All evaluators accept a single point (3,) or a batch (P, 3) and return
matching leading shapes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConfigMismatchError, InvalidInputError, OnSurfaceError
from .tensors import LEVI_CIVITA, TracelessSym3, sym


def _vec(v):
    return np.asarray(v, dtype=float).reshape(3)


def _batch(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise InvalidInputError(f"points must have a trailing axis of length 3, got shape {x.shape}")
    return x.reshape(-1, 3), x.shape[:-1]


def skew(omega):
    """Matrix of x -> omega cross x, i.e. the gradient of a rigid rotation."""
    return np.einsum("iaj,a->ij", LEVI_CIVITA, _vec(omega))


# ------------------------------------------------------------------ ambient

class AmbientField:
    """Analytic background flow. Subclasses implement ``_vel`` and ``_grad`` on (P, 3).

    ``_strain`` defaults to the symmetric part of ``_grad``; subclasses
    override it where the strain is known exactly, so that adding a rigid
    motion leaves every strain bit-for-bit unchanged.
    """

    def velocity(self, x):
        p, shape = _batch(x)
        return self._vel(p).reshape(shape + (3,))

    def gradient(self, x):
        p, shape = _batch(x)
        return self._grad(p).reshape(shape + (3, 3))

    def strain(self, x):
        p, shape = _batch(x)
        return self._strain(p).reshape(shape + (3, 3))

    def _strain(self, p):
        return sym(self._grad(p))

    def singular_points(self) -> np.ndarray:
        return np.empty((0, 3))

    def __add__(self, other):
        return Superposition((self, other))

    def __mul__(self, alpha):
        return self.scaled(alpha)

    __rmul__ = __mul__


@dataclass(frozen=True)
class LinearStrain(AmbientField):
    """u(x) = E x with E symmetric traceless."""

    E: TracelessSym3

    def __post_init__(self):
        if not isinstance(self.E, TracelessSym3):
            object.__setattr__(self, "E", TracelessSym3.from_matrix(self.E))

    def _vel(self, p):
        return p @ self.E.matrix.T

    def _grad(self, p):
        return np.broadcast_to(self.E.matrix, (len(p), 3, 3)).copy()

    def scaled(self, alpha):
        return LinearStrain(alpha * self.E)

    def rotated(self, rot):
        rot = np.asarray(rot, dtype=float)
        return LinearStrain(TracelessSym3.from_matrix(rot @ self.E.matrix @ rot.T))

    def to_dict(self):
        return {"type": "linear_strain", "E": self.E.matrix.tolist()}


@dataclass(frozen=True)
class RigidMotion(AmbientField):
    """u(x) = V + omega x (x - center)."""

    V: tuple = (0.0, 0.0, 0.0)
    omega: tuple = (0.0, 0.0, 0.0)
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("V", "omega", "center"):
            object.__setattr__(self, name, tuple(float(v) for v in _vec(getattr(self, name))))

    def _vel(self, p):
        return np.asarray(self.V) + np.cross(np.asarray(self.omega), p - np.asarray(self.center))

    def _grad(self, p):
        return np.broadcast_to(skew(self.omega), (len(p), 3, 3)).copy()

    def _strain(self, p):
        return np.zeros((len(p), 3, 3))

    def scaled(self, alpha):
        return RigidMotion(alpha * np.asarray(self.V), alpha * np.asarray(self.omega), self.center)

    def rotated(self, rot):
        rot = np.asarray(rot, dtype=float)
        return RigidMotion(rot @ self.V, rot @ self.omega, rot @ self.center)

    def to_dict(self):
        return {"type": "rigid", "V": list(self.V), "omega": list(self.omega), "center": list(self.center)}


@dataclass(frozen=True)
class Stokeslet(AmbientField):
    """Point force at ``location``."""

    force: tuple
    location: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "force", tuple(float(v) for v in _vec(self.force)))
        object.__setattr__(self, "location", tuple(float(v) for v in _vec(self.location)))

    def _vel(self, p):
        return kernels.stokeslet_velocity(self.force, self.location, p)

    def _grad(self, p):
        return kernels.stokeslet_gradient(self.force, self.location, p)

    def singular_points(self):
        return np.array([self.location])

    def scaled(self, alpha):
        return Stokeslet(alpha * np.asarray(self.force), self.location)

    def rotated(self, rot):
        rot = np.asarray(rot, dtype=float)
        return Stokeslet(rot @ self.force, rot @ self.location)

    def to_dict(self):
        return {"type": "stokeslet", "force": list(self.force), "location": list(self.location)}


@dataclass(frozen=True)
class Superposition(AmbientField):
    """Sum of ambient flows, evaluated in list order."""

    parts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def _vel(self, p):
        out = np.zeros((len(p), 3))
        for part in self.parts:
            out = out + part._vel(p)
        return out

    def _grad(self, p):
        out = np.zeros((len(p), 3, 3))
        for part in self.parts:
            out = out + part._grad(p)
        return out

    def _strain(self, p):
        out = np.zeros((len(p), 3, 3))
        for part in self.parts:
            out = out + part._strain(p)
        return out

    def singular_points(self):
        pts = [part.singular_points() for part in self.parts]
        return np.concatenate(pts) if pts else np.empty((0, 3))

    def scaled(self, alpha):
        return Superposition(tuple(part.scaled(alpha) for part in self.parts))

    def rotated(self, rot):
        return Superposition(tuple(part.rotated(rot) for part in self.parts))

    def to_dict(self):
        return {"type": "superposition", "parts": [part.to_dict() for part in self.parts]}


def ambient_from_dict(data) -> AmbientField:
    """Inverse of ``AmbientField.to_dict``; rejects unknown keys."""
    if not isinstance(data, dict) or "type" not in data:
        raise InvalidInputError("ambient must be an object with a 'type'")
    kind = data["type"]
    allowed = {
        "linear_strain": {"E"},
        "rigid": {"V", "omega", "center"},
        "stokeslet": {"force", "location"},
        "superposition": {"parts"},
    }
    if kind not in allowed:
        raise InvalidInputError(f"unknown ambient type {kind!r}")
    extra = set(data) - allowed[kind] - {"type"}
    if extra:
        raise InvalidInputError(f"unknown fields for {kind}: {sorted(extra)}")
    if kind == "linear_strain":
        E = np.asarray(data["E"], dtype=float)
        if E.shape != (3, 3):
            raise InvalidInputError("E must be a 3x3 matrix")
        scale = max(np.abs(E).max(), 1.0)
        if np.abs(E - E.T).max() > 1e-12 * scale or abs(np.trace(E)) > 1e-12 * scale:
            raise InvalidInputError("E must be symmetric and traceless")
        return LinearStrain(TracelessSym3.from_matrix(E))
    if kind == "rigid":
        return RigidMotion(data.get("V", (0, 0, 0)), data.get("omega", (0, 0, 0)),
                           data.get("center", (0, 0, 0)))
    if kind == "stokeslet":
        return Stokeslet(data["force"], data.get("location", (0, 0, 0)))
    return Superposition(tuple(ambient_from_dict(p) for p in data["parts"]))


# -------------------------------------------------------------------- terms

@dataclass(frozen=True, eq=False)
class DipoleTerm:
    """Simple dipole radiated by one sphere; strain S inside the ball."""

    source_center: np.ndarray
    source_radius: float
    coefficient: TracelessSym3

    def velocity(self, x):
        return kernels.dipole_velocity(self.coefficient, self.source_center, self.source_radius, x)

    def gradient(self, x):
        return kernels.dipole_gradient(self.coefficient, self.source_center, self.source_radius, x)


@dataclass(frozen=True, eq=False)
class CollocationTerm:
    """Higher-order radiated field: basis coefficients outside, quadratic polynomial inside.

    ``coefficients`` multiply :func:`kernels.collocation_basis` (unit
    coordinates, scaled by the radius); ``interior`` is the (3, 3, 3)
    quadratic tensor whose mean-free polynomial is the value inside the ball.
    """

    source_center: np.ndarray
    source_radius: float
    coefficients: np.ndarray
    interior: np.ndarray

    def velocity(self, x):
        p, shape = _batch(x)
        v, _ = _collocation_eval(p, self.source_center, self.source_radius,
                                 self.coefficients, self.interior, gradient=False)
        return v.reshape(shape + (3,))

    def gradient(self, x):
        p, shape = _batch(x)
        _, g = _collocation_eval(p, self.source_center, self.source_radius,
                                 self.coefficients, self.interior, gradient=True)
        return g.reshape(shape + (3, 3))


def _collocation_eval(p, center, radius, coeffs, interior, gradient):
    y = (p - np.asarray(center)) / radius
    r2 = np.sum(y * y, axis=1)
    if gradient and np.any(np.abs(r2 - 1.0) <= kernels.SURFACE_TOL):
        raise OnSurfaceError("collocation gradient requested on the source sphere surface", index=None)
    inside = r2 <= 1.0
    vel = np.zeros((len(p), 3))
    grad = np.zeros((len(p), 3, 3)) if gradient else None
    if np.any(inside):
        qv, qg = kernels.quadratic_interior(interior, y[inside], gradient)
        vel[inside] = radius * qv
        if gradient:
            grad[inside] = qg
    out = ~inside
    if np.any(out):
        bv, bg = kernels.collocation_field(coeffs, y[out], gradient)
        vel[out] = radius * bv
        if gradient:
            grad[out] = bg
    return vel, grad


class FieldTerm(NamedTuple):
    """Read-only view of one particle's contribution."""

    index: int
    dipole: DipoleTerm
    collocation: CollocationTerm | None
    rigid_correction: RigidMotion


# ---------------------------------------------------------------- FlowField

@dataclass(frozen=True, eq=False)
class FlowField:
    """Ambient flow plus one radiated term per particle.

    Stored as stacked arrays: ``dipoles`` (N, 3, 3); optional ``collocation``
    (N, 27) with ``interior`` (N, 3, 3, 3); optional ``rigid`` (N, 6) holding
    (V, omega) corrections applied only inside the owning ball.
    """

    ambient: AmbientField
    centers: np.ndarray
    radii: np.ndarray
    dipoles: np.ndarray
    collocation: np.ndarray | None = None
    interior: np.ndarray | None = None
    rigid: np.ndarray | None = None

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 3)
        n = len(c)
        d = np.array(self.dipoles, dtype=float).reshape(n, 3, 3)
        arrays = {"centers": c, "radii": np.array(self.radii, dtype=float).reshape(n), "dipoles": d}
        if (self.collocation is None) != (self.interior is None):
            raise InvalidInputError("collocation coefficients and interior polynomials go together")
        if self.collocation is not None:
            arrays["collocation"] = np.array(self.collocation, dtype=float).reshape(n, kernels.N_COLLOCATION)
            arrays["interior"] = np.array(self.interior, dtype=float).reshape(n, 3, 3, 3)
        if self.rigid is not None:
            arrays["rigid"] = np.array(self.rigid, dtype=float).reshape(n, 6)
        for k, v in arrays.items():
            v.flags.writeable = False
            object.__setattr__(self, k, v)

    @classmethod
    def empty(cls, ambient, cfg) -> "FlowField":
        """The ambient flow with zero radiated terms for every particle of cfg."""
        return cls(ambient, cfg.centers, cfg.radii, np.zeros((cfg.n, 3, 3)))

    @property
    def n(self) -> int:
        return len(self.radii)

    @property
    def terms(self) -> list:
        out = []
        for i in range(self.n):
            coll = None
            if self.collocation is not None:
                coll = CollocationTerm(self.centers[i], self.radii[i], self.collocation[i], self.interior[i])
            rig = (RigidMotion((0, 0, 0), (0, 0, 0), self.centers[i]) if self.rigid is None
                   else RigidMotion(self.rigid[i, :3], self.rigid[i, 3:], self.centers[i]))
            out.append(FieldTerm(i, DipoleTerm(self.centers[i], float(self.radii[i]),
                                               TracelessSym3.from_matrix(self.dipoles[i])), coll, rig))
        return out

    def dipole(self, i) -> TracelessSym3:
        return TracelessSym3.from_matrix(self.dipoles[i])

    # -- linear structure -------------------------------------------------
    def _check_same(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        if self.n != other.n or not (np.array_equal(self.centers, other.centers)
                                     and np.array_equal(self.radii, other.radii)):
            raise ConfigMismatchError("fields refer to different particle configurations")
        return True

    def __add__(self, other):
        if self._check_same(other) is NotImplemented:
            return NotImplemented

        def add(a, b, shape):
            if a is None and b is None:
                return None
            return (np.zeros(shape) if a is None else a) + (np.zeros(shape) if b is None else b)

        n = self.n
        return FlowField(self.ambient + other.ambient, self.centers, self.radii,
                         self.dipoles + other.dipoles,
                         add(self.collocation, other.collocation, (n, kernels.N_COLLOCATION)),
                         add(self.interior, other.interior, (n, 3, 3, 3)),
                         add(self.rigid, other.rigid, (n, 6)))

    def __mul__(self, alpha):
        alpha = float(alpha)

        def mul(a):
            return None if a is None else alpha * a

        return FlowField(self.ambient.scaled(alpha), self.centers, self.radii, alpha * self.dipoles,
                         mul(self.collocation), mul(self.interior), mul(self.rigid))

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other

    def with_terms(self, dipoles, collocation=None, interior=None, rigid=None) -> "FlowField":
        return FlowField(self.ambient, self.centers, self.radii, dipoles, collocation, interior, rigid)

    # -- evaluation -------------------------------------------------------
    def _extras(self, p, gradient, want_velocity=True):
        """Collocation and rigid contributions, in particle order."""
        vel = np.zeros((len(p), 3))
        grad = np.zeros((len(p), 3, 3)) if gradient else None
        if self.collocation is not None:
            for j in range(self.n):
                if not np.any(self.collocation[j]) and not np.any(self.interior[j]):
                    continue
                v, g = _collocation_eval(p, self.centers[j], self.radii[j], self.collocation[j],
                                         self.interior[j], gradient)
                if want_velocity:
                    vel += v
                if gradient:
                    grad += g
        if self.rigid is not None:
            for j in range(self.n):
                if not np.any(self.rigid[j]):
                    continue
                rel = p - self.centers[j]
                inside = np.sum(rel * rel, axis=1) <= self.radii[j] ** 2
                if not np.any(inside):
                    continue
                V, w = self.rigid[j, :3], self.rigid[j, 3:]
                vel[inside] += V + np.cross(w, rel[inside])
                if gradient:
                    grad[inside] += skew(w)
        return vel, grad

    def velocity(self, x):
        p, shape = _batch(x)
        v = self.ambient._vel(p)
        dv, _ = kernels.sum_dipoles(p, self.centers, self.radii, self.dipoles, velocity=True, gradient=False)
        ev, _ = self._extras(p, gradient=False)
        return (v + dv + ev).reshape(shape + (3,))

    def velocity_and_gradient(self, x):
        p, shape = _batch(x)
        v = self.ambient._vel(p)
        g = self.ambient._grad(p)
        dv, dg = kernels.sum_dipoles(p, self.centers, self.radii, self.dipoles)
        ev, eg = self._extras(p, gradient=True)
        return (v + dv + ev).reshape(shape + (3,)), (g + dg + eg).reshape(shape + (3, 3))

    def gradient(self, x):
        return self.velocity_and_gradient(x)[1]

    def strain(self, x):
        """Symmetric gradient, (..., 3, 3)."""
        p, shape = _batch(x)
        e = self.ambient._strain(p)
        e = e + kernels.sum_dipole_strains(p, self.centers, self.radii, self.dipoles)
        if self.collocation is not None:
            _, eg = self._extras(p, gradient=True, want_velocity=False)
            e = e + sym(eg)
        return e.reshape(shape + (3, 3))


def evaluate_velocity(fld: FlowField, x):
    """Velocity of the composite field at a point (3,) or points (P, 3)."""
    return fld.velocity(x)


def evaluate_strain(fld: FlowField, x):
    """Strain at x: a TracelessSym3 for a single point, else a (P, 3, 3) array."""
    x = np.asarray(x, dtype=float)
    e = fld.strain(x)
    if x.ndim == 1:
        return TracelessSym3.from_matrix(e)
    return e


# ------------------------------------------------------------- grid export

GRID_VELOCITY_COLUMNS = ("x", "y", "z", "ux", "uy", "uz")
GRID_STRAIN_COLUMNS = ("exx", "exy", "exz", "eyy", "eyz")


@dataclass
class GridSample:
    """Row-major samples (x slowest, z fastest) with per-row flags.

    ``flags`` is 0 for regular rows, 1 at a point-force singularity and 2 on
    a source sphere surface (strain requested); flagged rows hold NaN.
    """

    columns: tuple
    rows: np.ndarray
    flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def any_flagged(self) -> bool:
        return bool(np.any(self.flags))


def grid_points(lo, hi, shape):
    axes = [np.linspace(a, b, int(n)) if int(n) > 1 else np.array([0.5 * (a + b)])
            for a, b, n in zip(lo, hi, shape)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def sample_grid(fld: FlowField, lo, hi, shape, strain=False) -> GridSample:
    """Evaluate velocity (and optionally strain) on a regular grid."""
    if len(shape) != 3 or any(int(n) < 1 for n in shape):
        raise InvalidInputError("grid shape must be three positive integers")
    pts = grid_points(lo, hi, shape)
    flags = np.zeros(len(pts), dtype=int)
    sing = fld.ambient.singular_points()
    for s in sing:
        flags[np.sum((pts - s) ** 2, axis=1) <= 1e-24] = 1
    if strain:
        for c, r in zip(fld.centers, fld.radii):
            r2 = np.sum(((pts - c) / r) ** 2, axis=1)
            flags[(flags == 0) & (np.abs(r2 - 1.0) <= kernels.SURFACE_TOL)] = 2
    cols = GRID_VELOCITY_COLUMNS + (GRID_STRAIN_COLUMNS if strain else ())
    rows = np.full((len(pts), len(cols)), np.nan)
    rows[:, :3] = pts
    ok = flags == 0
    if np.any(ok):
        if strain:
            v = fld.velocity(pts[ok])
            e = fld.strain(pts[ok])
            rows[ok, 3:6] = v
            rows[ok, 6:] = np.stack([e[:, 0, 0], e[:, 0, 1], e[:, 0, 2], e[:, 1, 1], e[:, 1, 2]], axis=1)
        else:
            rows[ok, 3:6] = fld.velocity(pts[ok])
    return GridSample(cols, rows, flags)


__all__ = [
    "AmbientField", "LinearStrain", "RigidMotion", "Stokeslet", "Superposition", "ambient_from_dict",
    "DipoleTerm", "CollocationTerm", "FieldTerm", "FlowField", "evaluate_velocity", "evaluate_strain",
    "sample_grid", "grid_points", "GridSample", "skew",
]
