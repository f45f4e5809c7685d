"""Verification instruments built on the solver.

Everything operator-theoretic here lives on the simple-dipole subspace
(five coefficients per particle); reports say so in their header.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg, stats
from scipy.sparse import linalg as sparse_linalg

from . import kernels
from .errors import (ConfigMismatchError, ConvergenceError, DivergenceError, InvalidInputError,
                     NormalizationError)
from .fields import AmbientField, FlowField, LinearStrain
from .geometry import Box, ParticleConfig, generate_lattice, generate_poisson_disk
from .moments import ball_moments
from .quadrature import SphereQuadrature
from .reflections import SolverOptions, reflection_step, residual_norm, moment_residual, run
from .tensors import SYM0_BASIS, TracelessSym3, as_matrix

SUBSPACE_NOTE = "restricted to the simple-dipole subspace (5 coefficients per particle)"


# ------------------------------------------------------------ sweep families

@dataclass(frozen=True)
class LatticeFamily:
    """Cubic lattices with fixed radius; spacing = radius * phi0^(-1/3)."""

    n_per_side: int
    radius: float = 1.0

    def config_for(self, phi0: float, seed: int | None = None) -> ParticleConfig:
        return generate_lattice(self.n_per_side, self.radius * phi0 ** (-1.0 / 3.0), self.radius)

    def describe(self) -> str:
        return f"lattice n={self.n_per_side} R={self.radius:g}"


@dataclass(frozen=True)
class PoissonFamily:
    """Random dart-throwing clouds with min_gap = radius * phi0^(-1/3).

    The box side is ``spread`` times the gap times count^(1/3), so the
    realized phi0 is at most the requested value.
    """

    count: int
    radius: float = 1.0
    spread: float = 2.0

    def config_for(self, phi0: float, seed: int | None = None) -> ParticleConfig:
        if seed is None:
            raise InvalidInputError("random families need a seed")
        gap = self.radius * phi0 ** (-1.0 / 3.0)
        side = self.spread * gap * max(self.count, 1) ** (1.0 / 3.0) + 2 * self.radius
        return generate_poisson_disk(self.count, Box.cube(side), gap, self.radius, seed)

    def describe(self) -> str:
        return f"poisson count={self.count} R={self.radius:g}"


def family_from_dict(data: dict):
    kind = data.get("kind")
    rest = {k: v for k, v in data.items() if k != "kind"}
    if kind == "lattice":
        cls = LatticeFamily
    elif kind == "poisson_disk":
        cls = PoissonFamily
    else:
        raise InvalidInputError(f"unknown family kind {kind!r}")
    extra = set(rest) - set(cls.__dataclass_fields__)
    if extra:
        raise InvalidInputError(f"unknown family fields: {sorted(extra)}")
    return cls(**rest)


@dataclass(frozen=True)
class SweepPoint:
    phi0: float
    rho: float
    n: int
    seed: int | None
    theta_max: float
    iterations: int
    diverged: bool = False
    descriptor: str = ""


@dataclass
class SweepResult:
    """Fitted rates per configuration and the log-log regression of rho on phi0.

    Points that diverged, have a single particle or a non-positive rate are
    kept in ``points`` but left out of the fit (``used`` marks the others).
    """

    points: list
    slope: float = math.nan
    intercept: float = math.nan
    slope_stderr: float = math.nan
    used: list = field(default_factory=list)

    def refit(self):
        x, y = [], []
        self.used = []
        for p in self.points:
            ok = (not p.diverged) and p.n > 1 and p.phi0 > 0 and p.rho > 0 and math.isfinite(p.rho)
            self.used.append(ok)
            if ok:
                x.append(math.log(p.phi0))
                y.append(math.log(p.rho))
        if len(x) >= 2:
            fit = stats.linregress(x, y)
            self.slope, self.intercept = float(fit.slope), float(fit.intercept)
            self.slope_stderr = float(fit.stderr) if len(x) > 2 else 0.0
        else:
            self.slope = self.intercept = self.slope_stderr = math.nan
        return self

    def to_dict(self) -> dict:
        def num(v):
            return v if (v is not None and math.isfinite(v)) else None
        return {
            "slope": num(self.slope),
            "intercept": num(self.intercept),
            "slope_stderr": num(self.slope_stderr),
            "points": [{"phi0": p.phi0, "rho": num(p.rho), "N": p.n, "seed": p.seed,
                        "theta_max": num(p.theta_max), "iterations": p.iterations,
                        "diverged": p.diverged, "used_in_fit": u, "config": p.descriptor}
                       for p, u in zip(self.points, self.used)],
        }


def contraction_sweep(family, phi0_list, opts: SolverOptions | None = None,
                      ambient: AmbientField | None = None, seed: int | None = None) -> SweepResult:
    """Run the solver for each phi0 of the family and regress log rho on log phi0."""
    phi0_list = list(phi0_list)
    if not phi0_list:
        raise InvalidInputError("phi0 list is empty")
    opts = opts or SolverOptions()
    ambient = ambient or LinearStrain(TracelessSym3(xy=0.5))
    points = []
    for phi in phi0_list:
        if not 0 < phi < 1 / 8:
            raise InvalidInputError(f"phi0 = {phi} not realizable with disjoint spheres")
        cfg = family.config_for(phi, seed)
        try:
            _, rep = run(cfg, ambient, opts)
            diverged = False
        except DivergenceError as exc:
            rep = exc.report
            diverged = True
        # one step is exact for an isolated sphere; the fitted ratio would only be roundoff
        rho = rep.rho if cfg.n > 1 else 0.0
        points.append(SweepPoint(cfg.phi0 if cfg.n > 1 else phi, rho, cfg.n, seed, cfg.theta_max,
                                 rep.iterations, diverged, family.describe()))
    return SweepResult(points).refit()


# ------------------------------------------------------- interaction matrix

@dataclass(frozen=True, eq=False)
class DipoleInteractionMatrix:
    """M with blocks M_ij S = average over B_i of e(w_{S_j}), in SYM0_BASIS coordinates.

    ``weights`` are the energy-pairing factors (20 pi / 3) R_i^3 repeated
    per coordinate: W M is symmetric when L is self-adjoint.
    """

    matrix: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.weights) // 5

    def apply(self, coeffs):
        """Act on stacked coefficient matrices (N, 3, 3); returns (N, 3, 3)."""
        c = np.einsum("nij,bij->nb", np.asarray(coeffs, dtype=float), SYM0_BASIS).reshape(-1)
        out = (self.matrix @ c).reshape(-1, 5)
        return np.einsum("nb,bij->nij", out, SYM0_BASIS)

    def energy_matrix(self):
        return self.weights[:, None] * self.matrix

    def symmetry_error(self) -> float:
        g = self.energy_matrix()
        return float(np.abs(g - g.T).max() / max(np.abs(g).max(), 1e-300))

    def symmetrized(self):
        """D^(1/2) M D^(-1/2), symmetrized to remove quadrature noise."""
        s = np.sqrt(self.weights)
        a = s[:, None] * self.matrix / s[None, :]
        return 0.5 * (a + a.T)


def interaction_matrix(cfg: ParticleConfig, quad: SphereQuadrature | None = None) -> DipoleInteractionMatrix:
    """Assemble the dipole interaction matrix.

    Without ``quad`` the off-diagonal blocks use the exact mean-value
    identity for biharmonic fields; with ``quad`` every block is a ball
    quadrature of the analytic strain (the independent route).
    """
    n = cfg.n
    M = np.zeros((n, 5, n, 5))
    if quad is None:
        ii, jj = np.nonzero(~np.eye(n, dtype=bool))
        for b in range(5):
            avg = kernels.dipole_ball_average_strain(
                SYM0_BASIS[b], cfg.centers[jj], cfg.radii[jj], cfg.centers[ii], cfg.radii[ii])
            M[ii, :, jj, b] = np.einsum("pij,aij->pa", avg, SYM0_BASIS)
        for i in range(n):
            M[i, :, i, :] = np.eye(5)
    else:
        zero = np.zeros((n, 3, 3))
        for j in range(n):
            for b in range(5):
                dip = zero.copy()
                dip[j] = SYM0_BASIS[b]
                fld = FlowField(LinearStrain(TracelessSym3()), cfg.centers, cfg.radii, dip)
                S = ball_moments(fld, quad).dipoles
                M[:, :, j, b] = np.einsum("nij,aij->na", S, SYM0_BASIS)
    w = np.repeat(20.0 * np.pi / 3.0 * cfg.radii ** 3, 5)
    return DipoleInteractionMatrix(M.reshape(5 * n, 5 * n), w)


class OperatorEstimate(NamedTuple):
    """Extreme Rayleigh quotients of the dipole interaction operator (energy pairing)."""

    norm: float
    rayleigh_max: float
    rayleigh_min: float
    symmetry_error: float
    iterations: int
    note: str = SUBSPACE_NOTE


def operator_norm_estimate(cfg: ParticleConfig, quad: SphereQuadrature | None = None,
                           iterations: int = 5000, rtol: float = 1e-12) -> OperatorEstimate:
    """Extreme Rayleigh quotients of the symmetrized dipole interaction operator.

    The largest comes from Krylov-accelerated power iteration (implicitly
    restarted Lanczos), the smallest from the same iteration applied to the
    inverse through an LU factorization (shift 0). The dipole matrix is
    nonsingular for separated configurations, so the smallest eigenvalue of
    the range is the smallest eigenvalue overall. ``quad`` selects
    quadrature assembly; by default blocks are exact.
    """
    if cfg.n > 1 and not cfg.theta_max > 1.0:
        raise InvalidInputError(f"configuration not theta-separated (theta_max = {cfg.theta_max})")
    dim = interaction_matrix(cfg, quad)
    A = dim.symmetrized()
    m = A.shape[0]
    lu = linalg.lu_factor(A)
    lam_max, it1 = _lanczos_top(lambda x: A @ x, m, iterations, rtol, "power")
    inv_max, it2 = _lanczos_top(lambda x: linalg.lu_solve(lu, x), m, iterations, rtol, "inverse")
    return OperatorEstimate(abs(lam_max), lam_max, 1.0 / inv_max, dim.symmetry_error(), max(it1, it2))


def _lanczos_top(matvec, m, iterations, rtol, label):
    """Largest eigenvalue of a symmetric operator; deterministic start vector."""
    v0 = np.random.Generator(np.random.PCG64(0)).standard_normal(m)
    counter = [0]

    def counted(x):
        counter[0] += 1
        return matvec(np.asarray(x).reshape(-1))

    op = sparse_linalg.LinearOperator((m, m), matvec=counted, dtype=float)
    try:
        vals = sparse_linalg.eigsh(op, k=1, which="LA", v0=v0, tol=rtol, maxiter=iterations,
                                   return_eigenvectors=False, ncv=min(m, 20) if m > 1 else None)
    except sparse_linalg.ArpackNoConvergence as exc:
        raise ConvergenceError(f"{label} iteration did not converge in {iterations} restarts",
                               last_values=list(exc.eigenvalues)) from None
    return float(vals[-1]), counter[0]


# --------------------------------------------------------------- decay fits

class DecayFit(NamedTuple):
    velocity_slope: float
    gradient_slope: float
    exact_zero: bool = False


def _directions():
    return SphereQuadrature(11, 4).surface_nodes


def decay_slope_check(kind: str = "dipole", window=(10.0, 1e4), coefficients=None,
                      samples: int = 25) -> DecayFit:
    """Log-log slopes of the max-over-directions |velocity| and |gradient| vs distance.

    Distances are in source radii (unit source ball at the origin). For the
    collocation kind ``coefficients`` are the 27 basis weights and the fit
    covers the exterior remainder only.
    """
    lo, hi = window
    if not (10.0 <= lo < hi <= 1e4):
        raise InvalidInputError("decay window must lie within [10, 1e4] source radii")
    if kind == "dipole":
        S = as_matrix(coefficients) if coefficients is not None else np.array(
            [[0.3, 0.5, -0.2], [0.5, -0.7, 0.1], [-0.2, 0.1, 0.4]])
        if not np.any(S):
            return DecayFit(math.nan, math.nan, True)
    elif kind == "collocation":
        c = (np.ones(kernels.N_COLLOCATION) if coefficients is None
             else np.asarray(coefficients, dtype=float).reshape(kernels.N_COLLOCATION))
        if not np.any(c):
            return DecayFit(math.nan, math.nan, True)
    else:
        raise InvalidInputError(f"unknown term kind {kind!r}")
    dist = np.geomspace(lo, hi, samples)
    dirs = _directions()
    vmax, gmax = [], []
    for d in dist:
        pts = d * dirs
        if kind == "dipole":
            v = kernels.dipole_velocity(S, np.zeros(3), 1.0, pts)
            g = kernels.dipole_gradient(S, np.zeros(3), 1.0, pts)
        else:
            v, g = kernels.collocation_field(c, pts)
        vmax.append(np.linalg.norm(v, axis=1).max())
        gmax.append(np.linalg.norm(g, axis=(1, 2)).max())
    ld = np.log(dist)
    return DecayFit(float(np.polyfit(ld, np.log(vmax), 1)[0]),
                    float(np.polyfit(ld, np.log(gmax), 1)[0]))


# ------------------------------------------------- boundary averages

class BoundaryAverageError(NamedTuple):
    per_particle: np.ndarray
    sup: float


def boundary_average_error(v_k: FlowField, v_ref: FlowField, cfg: ParticleConfig,
                           quad: SphereQuadrature) -> BoundaryAverageError:
    """|surface average over each sphere of (v_k - v_ref)| and its maximum."""
    for f in (v_k, v_ref):
        if f.n != cfg.n or not (np.array_equal(f.centers, cfg.centers) and np.array_equal(f.radii, cfg.radii)):
            raise ConfigMismatchError("field and configuration disagree")
    diff = v_k - v_ref
    pts = (cfg.centers[:, None, :] + cfg.radii[:, None, None] * quad.surface_nodes[None]).reshape(-1, 3)
    vals = diff.velocity(pts).reshape(cfg.n, -1, 3)
    avg = np.einsum("m,nmi->ni", quad.surface_weights, vals) / (4 * np.pi)
    err = np.linalg.norm(avg, axis=1)
    return BoundaryAverageError(err, float(err.max()) if len(err) else 0.0)


class SuperconvergenceRow(NamedTuple):
    k: int
    sup_average_error: float
    sup_pointwise_error: float
    strain_residual: float
    moment_residual: float

    @property
    def ratio(self) -> float:
        return self.sup_average_error / self.strain_residual if self.strain_residual > 0 else math.nan


def superconvergence_table(cfg: ParticleConfig, ambient: AmbientField, opts: SolverOptions,
                           k_max: int = 3, ref_tol: float = 1e-12):
    """Pair sup_i |surface-average error| of v_k with r_k = ||e v_k||_{L^q(balls)}.

    The reference is the converged iterate of the same truncated scheme.
    Returns (rows, reference report).
    """
    quad = opts.quadrature()
    ref_opts = SolverOptions(**{**opts.to_dict(), "tol": ref_tol, "max_iterations": 500})
    v_ref, ref_rep = run(cfg, ambient, ref_opts)
    rows = []
    v = FlowField.empty(ambient, cfg)
    bpts = (cfg.centers[:, None, :] + cfg.radii[:, None, None] * quad.ball_nodes[None]).reshape(-1, 3)
    for k in range(k_max + 1):
        avg = boundary_average_error(v, v_ref, cfg, quad)
        point = float(np.linalg.norm((v - v_ref).velocity(bpts), axis=1).max())
        rows.append(SuperconvergenceRow(k, avg.sup, point, residual_norm(v, cfg, opts.q, quad),
                                        moment_residual(v, cfg, opts.q, quad)))
        if k < k_max:
            v = reflection_step(v, cfg, opts, quad=quad)
    return rows, ref_rep


# ----------------------------------------------------- Einstein estimate

def default_sample_box(cfg: ParticleConfig) -> Box | None:
    """Bounding box of the centers shrunk by 2 d_min; None for a single particle."""
    if cfg.n < 2:
        return None
    lo = cfg.centers.min(axis=0) + 2 * cfg.d_min
    hi = cfg.centers.max(axis=0) - 2 * cfg.d_min
    if np.any(hi <= lo):
        raise InvalidInputError("cloud too small to leave a core after excluding a 2*d_min boundary layer")
    return Box(tuple(lo), tuple(hi))


def einstein_viscosity_estimate(converged: FlowField, cfg: ParticleConfig, ambient: LinearStrain,
                                sample_box: Box | None = None) -> float:
    """(mu_eff - mu) / (mu phi) from the dipole coefficients of a converged run.

    Each sphere carries the stresslet (20 pi / 3) R^3 S with S the strain it
    cancels, i.e. minus its dipole coefficient in the field. Particles whose
    centers lie in ``sample_box`` (default: :func:`default_sample_box`) are
    counted; the sample volume cancels in the ratio.
    """
    if not isinstance(ambient, LinearStrain):
        raise InvalidInputError("the viscosity estimate needs a pure linear-strain ambient")
    E = ambient.E.matrix
    e2 = float(np.sum(E * E))
    if e2 == 0.0:
        raise NormalizationError("ambient strain is zero; the normalized increment is undefined")
    if converged.n != cfg.n or not np.array_equal(converged.centers, cfg.centers):
        raise ConfigMismatchError("field and configuration disagree")
    box = sample_box if sample_box is not None else default_sample_box(cfg)
    mask = np.ones(cfg.n, dtype=bool) if box is None else box.contains(cfg.centers)
    if not np.any(mask):
        raise InvalidInputError("no particle centers inside the sample volume")
    r3 = cfg.radii[mask] ** 3
    stress = -converged.dipoles[mask]
    increment = np.sum(20.0 * np.pi / 3.0 * r3 * np.einsum("nij,ij->n", stress, E)) / (2.0 * e2)
    phi_volume = np.sum(4.0 * np.pi / 3.0 * r3)
    return float(increment / phi_volume)
