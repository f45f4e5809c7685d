"""Particle configurations, separation metrics and deterministic generators.

All index sets are finite. For a single particle the pairwise quantities
are vacuous and we use the limits d_min = inf, phi0 = 0, theta_max = inf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import GenerationFailedError, InvalidInputError, OverlapError


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise InvalidInputError("box corners must be 3-vectors")
        if any(h <= l for l, h in zip(lo, hi)):
            raise InvalidInputError(f"degenerate box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, side, origin=(0.0, 0.0, 0.0)):
        o = np.asarray(origin, dtype=float)
        return cls(tuple(o), tuple(o + side))

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= np.asarray(self.lo)) & (p <= np.asarray(self.hi)), axis=1)

    def shrink(self, width) -> "Box | None":
        lo = np.add(self.lo, width)
        hi = np.subtract(self.hi, width)
        if np.any(hi <= lo):
            return None
        return Box(tuple(lo), tuple(hi))


@dataclass(frozen=True, eq=False)
class ParticleConfig:
    """Ordered spheres with centers (N, 3) and radii (N,).

    Arrays are copied and frozen on construction. Disjointness is not
    enforced here; :func:`validate_config` reports it.
    """

    centers: np.ndarray
    radii: np.ndarray
    box: Box | None = None

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 3)
        r = np.array(self.radii, dtype=float).reshape(-1)
        if len(c) != len(r):
            raise InvalidInputError(f"{len(c)} centers but {len(r)} radii")
        if not np.all(np.isfinite(c)):
            raise InvalidInputError("non-finite particle center")
        for i, ri in enumerate(r):
            if not (np.isfinite(ri) and ri > 0):
                raise InvalidInputError(f"particle {i}: radius must be positive, got {ri!r}")
        c.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)

    def __len__(self):
        return len(self.radii)

    @property
    def n(self) -> int:
        return len(self.radii)

    @cached_property
    def _pairs(self):
        # condensed pairwise center distances and radius sums, in pdist order
        if self.n < 2:
            return np.empty(0), np.empty(0)
        d = pdist(self.centers)
        ii, jj = np.triu_indices(self.n, k=1)
        return d, self.radii[ii] + self.radii[jj]

    @cached_property
    def d_min(self) -> float:
        d, _ = self._pairs
        return float(d.min()) if d.size else math.inf

    @cached_property
    def r_max(self) -> float:
        return float(self.radii.max()) if self.n else 0.0

    @cached_property
    def phi0(self) -> float:
        if self.n < 2:
            return 0.0
        return self.r_max ** 3 / self.d_min ** 3

    @cached_property
    def theta_max(self) -> float:
        d, rs = self._pairs
        return float((d / rs).min()) if d.size else math.inf

    def overlapping_pairs(self):
        """Index pairs (i, j), i < j, whose closed balls intersect."""
        if self.n < 2:
            return []
        d, rs = self._pairs
        bad = np.nonzero(d <= rs)[0]
        ii, jj = np.triu_indices(self.n, k=1)
        return [(int(ii[k]), int(jj[k])) for k in bad]

    def scaled(self, s: float) -> "ParticleConfig":
        box = None if self.box is None else Box(tuple(np.multiply(self.box.lo, s)),
                                                 tuple(np.multiply(self.box.hi, s)))
        return ParticleConfig(self.centers * s, self.radii * s, box)

    def transformed(self, rotation=None, shift=None) -> "ParticleConfig":
        """Rigidly moved copy (box dropped, it is no longer axis-aligned)."""
        c = self.centers
        if rotation is not None:
            c = c @ np.asarray(rotation).T
        if shift is not None:
            c = c + np.asarray(shift)
        return ParticleConfig(c, self.radii)

    def to_dict(self) -> dict:
        out = {"particles": [{"center": [float(v) for v in c], "radius": float(r)}
                             for c, r in zip(self.centers, self.radii)]}
        if self.box is not None:
            out["box"] = {"lo": list(self.box.lo), "hi": list(self.box.hi)}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ParticleConfig":
        """Build from the configuration JSON layout; unknown keys are rejected."""
        extra = set(data) - {"particles", "box"}
        if extra:
            raise InvalidInputError(f"unknown configuration fields: {sorted(extra)}")
        parts = data.get("particles")
        if not isinstance(parts, list):
            raise InvalidInputError("'particles' must be a list")
        centers, radii = [], []
        for k, p in enumerate(parts):
            if not isinstance(p, dict) or set(p) != {"center", "radius"}:
                raise InvalidInputError(f"particle {k}: expected exactly 'center' and 'radius'")
            if len(p["center"]) != 3:
                raise InvalidInputError(f"particle {k}: center must have 3 components")
            centers.append(p["center"])
            radii.append(p["radius"])
        box = None
        if data.get("box") is not None:
            b = data["box"]
            if set(b) != {"lo", "hi"}:
                raise InvalidInputError("box must have exactly 'lo' and 'hi'")
            box = Box(tuple(b["lo"]), tuple(b["hi"]))
        return cls(np.array(centers, dtype=float).reshape(-1, 3), np.array(radii, dtype=float), box)


@dataclass(frozen=True)
class ValidationReport:
    n: int
    disjoint: bool
    d_min: float
    r_max: float
    phi0: float
    theta_max: float
    overlapping: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """Disjoint and strictly theta-separated (theta_max > 1)."""
        return self.disjoint and self.theta_max > 1.0

    def to_dict(self) -> dict:
        def num(v):
            return None if math.isinf(v) else v
        return {
            "n": self.n,
            "disjoint": self.disjoint,
            "theta_separated": self.theta_max > 1.0,
            "d_min": num(self.d_min),
            "r_max": self.r_max,
            "phi0": self.phi0,
            "theta_max": num(self.theta_max),
            "overlapping": [list(p) for p in self.overlapping],
        }


def validate_config(cfg: ParticleConfig) -> ValidationReport:
    if cfg.n < 1:
        raise InvalidInputError("configuration has no particles")
    bad = cfg.overlapping_pairs()
    return ValidationReport(cfg.n, not bad, cfg.d_min, cfg.r_max, cfg.phi0, cfg.theta_max, bad)


def compute_lambda_q(cfg: ParticleConfig, q: float) -> float:
    """sup_i sum_{j != i} R_j^3 / |X_i - X_j|^(2q)."""
    if q <= 0:
        raise InvalidInputError(f"exponent must be positive, got {q}")
    if cfg.n < 2:
        return 0.0
    d = squareform(pdist(cfg.centers))
    np.fill_diagonal(d, np.inf)
    terms = cfg.radii[None, :] ** 3 / d ** (2 * q)
    return float(terms.sum(axis=1).max())


def generate_lattice(n_per_side: int, spacing: float, radius: float) -> ParticleConfig:
    """Simple cubic lattice with lexicographic (i, j, k) ordering, first site at the origin."""
    if n_per_side < 1:
        raise InvalidInputError("n_per_side must be >= 1")
    if radius <= 0:
        raise InvalidInputError("radius must be positive")
    if spacing <= 2 * radius:
        raise OverlapError(f"spacing {spacing} <= 2*radius {2 * radius}: spheres would overlap")
    g = np.arange(n_per_side) * float(spacing)
    centers = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    side = (n_per_side - 1) * spacing
    box = Box((-radius,) * 3, (side + radius,) * 3)
    return ParticleConfig(centers, np.full(len(centers), float(radius)), box)


# PCG64 (O'Neill 2014) as shipped by numpy; its output stream for a given
# seed is fixed by numpy's stability policy for Generator + PCG64.
POISSON_ATTEMPTS_PER_PARTICLE = 2000


def generate_poisson_disk(count: int, box: Box, min_gap: float, radius: float,
                          seed: int) -> ParticleConfig:
    """Dart throwing: uniform candidate centers, kept when >= min_gap from all kept ones.

    Centers are drawn inside the box shrunk by ``radius`` so whole spheres fit.
    The retry budget is POISSON_ATTEMPTS_PER_PARTICLE * count candidates.
    """
    if count < 0:
        raise InvalidInputError("count must be non-negative")
    if radius <= 0:
        raise InvalidInputError("radius must be positive")
    if min_gap <= 2 * radius:
        raise OverlapError(f"min_gap {min_gap} <= 2*radius {2 * radius}")
    if count * min_gap ** 3 > 0.3 * box.volume:
        raise InvalidInputError(
            f"infeasible: count*min_gap^3 = {count * min_gap ** 3:g} exceeds 0.3*volume = {0.3 * box.volume:g}")
    inner = box.shrink(radius)
    if inner is None and count > 0:
        raise InvalidInputError("box too small for a single sphere")
    rng = np.random.Generator(np.random.PCG64(seed))
    lo = np.asarray(inner.lo) if inner else np.zeros(3)
    span = np.asarray(inner.hi) - lo if inner else np.zeros(3)
    kept = np.empty((count, 3))
    n = 0
    budget = POISSON_ATTEMPTS_PER_PARTICLE * count
    gap2 = min_gap * min_gap
    for _ in range(budget):
        if n == count:
            break
        c = lo + span * rng.random(3)
        if n == 0 or np.min(np.sum((kept[:n] - c) ** 2, axis=1)) >= gap2:
            kept[n] = c
            n += 1
    if n < count:
        raise GenerationFailedError(f"placed only {n} of {count} particles", achieved=n)
    return ParticleConfig(kept, np.full(count, float(radius)), box)
