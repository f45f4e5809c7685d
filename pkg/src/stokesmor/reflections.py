"""Jacobi method of reflections: v_{k+1} = v_k - gamma * sum_i Q_i v_k."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (ConfigMismatchError, DivergenceError, InvalidInputError, OverlapError,
                     SeparationError)
from .fields import AmbientField, FlowField
from .geometry import ParticleConfig, validate_config
from .moments import ball_moments, collocation_moments
from .quadrature import DEFAULT_RADIAL_NODES, DEFAULT_SURFACE_ORDER, SphereQuadrature

RESIDUAL_KINDS = ("moment", "full")
TERMINATIONS = ("tol", "max", "div")


@dataclass(frozen=True)
class SolverOptions:
    """Iteration settings.

    ``residual`` selects the quantity driving termination and the rate fit:
    ``"moment"`` uses (sum_i |B_i| |avg_{B_i} e v|^q)^(1/q), which the dipole
    truncation can drive to zero; ``"full"`` uses the L^q norm of e v over
    the balls, which plateaus at the part of the strain the truncation
    cannot represent. Both are always recorded.
    """

    degree: int = 1
    gamma: float = 1.0
    max_iterations: int = 100
    tol: float = 1e-10
    q: float = 2.0
    quad_order: int = DEFAULT_SURFACE_ORDER
    radial_nodes: int = DEFAULT_RADIAL_NODES
    window: int = 5
    discard: int = 2
    residual: str = "moment"
    divergence_factor: float = 10.0
    keep_history: bool = False

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise InvalidInputError(f"degree must be 1 or 2, got {self.degree}")
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidInputError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.tol > 0:
            raise InvalidInputError(f"tolerance must be positive, got {self.tol}")
        if not self.q > 1:
            raise InvalidInputError(f"residual exponent must exceed 1, got {self.q}")
        if self.max_iterations < 0:
            raise InvalidInputError("max_iterations must be non-negative")
        if self.window < 2:
            raise InvalidInputError("fit window needs at least 2 points")
        if self.discard < 0:
            raise InvalidInputError("discard must be non-negative")
        if not self.divergence_factor > 0:
            raise InvalidInputError("divergence_factor must be positive")
        if self.residual not in RESIDUAL_KINDS:
            raise InvalidInputError(f"residual must be one of {RESIDUAL_KINDS}")

    def quadrature(self) -> SphereQuadrature:
        return SphereQuadrature(self.quad_order, self.radial_nodes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SolverOptions":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise InvalidInputError(f"unknown solver options: {sorted(extra)}")
        return cls(**data)


@dataclass
class IterationReport:
    """Residual history and termination data of one run.

    ``residuals`` holds r_0 .. r_K for the quantity selected by
    ``options.residual``; ``strain_residuals`` and ``moment_residuals`` hold
    both kinds regardless. ``timings`` are wall seconds per iteration and
    are left out of :meth:`to_dict` unless requested, so that reports of
    repeated runs compare byte for byte.
    """

    options: SolverOptions
    phi0: float
    n: int
    residuals: list = field(default_factory=list)
    strain_residuals: list = field(default_factory=list)
    moment_residuals: list = field(default_factory=list)
    max_updates: list = field(default_factory=list)
    fit_residuals: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    rho: float = math.nan
    terminated: str = "max"
    history: list | None = None

    @property
    def iterations(self) -> int:
        return len(self.residuals) - 1

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "residuals": self.residuals,
            "rho": _finite_or_none(self.rho),
            "iterations": self.iterations,
            "terminated": self.terminated,
            "phi0": self.phi0,
            "n": self.n,
            "options": self.options.to_dict(),
            "strain_residuals": self.strain_residuals,
            "moment_residuals": self.moment_residuals,
            "max_updates": self.max_updates,
        }
        if self.fit_residuals:
            out["fit_residuals"] = self.fit_residuals
        if include_timing:
            out["timings"] = self.timings
        return out


def _finite_or_none(v):
    return float(v) if math.isfinite(v) else None


def fit_rate(residuals, window: int = 5, discard: int = 2) -> float:
    """Contraction ratio from a least-squares line through log r_k.

    Uses the last ``window`` iterates with k >= ``discard``. With fewer than
    two usable points it falls back to the geometric mean ratio over the
    whole history; an exact zero residual gives 0.
    """
    r = np.asarray(residuals, dtype=float)
    if len(r) < 2:
        return math.nan
    if r[0] <= 0:
        return 0.0
    k = np.arange(len(r))
    sel = (k >= discard) & (r > 0)
    idx = k[sel][-window:]
    if len(idx) >= 2:
        slope = np.polyfit(idx.astype(float), np.log(r[idx]), 1)[0]
        return float(np.exp(slope))
    last = r[-1]
    if last <= 0:
        return 0.0
    return float((last / r[0]) ** (1.0 / (len(r) - 1)))


def residual_norm(fld: FlowField, cfg: ParticleConfig, q: float, quad: SphereQuadrature) -> float:
    """(sum_i integral over B_i of |e v|_F^q)^(1/q) by ball quadrature."""
    if not q > 1:
        raise InvalidInputError(f"residual exponent must exceed 1, got {q}")
    _check_consistent(fld, cfg)
    return float(np.sum(ball_moments(fld, quad, q).strain_power) ** (1.0 / q))


def moment_residual(fld: FlowField, cfg: ParticleConfig, q: float, quad: SphereQuadrature) -> float:
    """(sum_i |B_i| |avg_{B_i} e v|_F^q)^(1/q)."""
    _check_consistent(fld, cfg)
    return float(np.sum(ball_moments(fld, quad, q).moment_power) ** (1.0 / q))


def _check_consistent(fld, cfg):
    if fld.n != cfg.n or not (np.array_equal(fld.centers, cfg.centers)
                              and np.array_equal(fld.radii, cfg.radii)):
        raise ConfigMismatchError("field terms do not match the configuration")


class _StepData:
    """Moments of the current iterate: residuals plus the pending correction."""

    def __init__(self, fld: FlowField, opts: SolverOptions, quad: SphereQuadrature):
        q = opts.q
        if opts.degree == 1:
            m = ball_moments(fld, quad, q)
            self.dipoles, self.interior, self.coefficients = m.dipoles, None, None
            self.fit = None
        else:
            m = collocation_moments(fld, quad, q)
            self.dipoles, self.interior, self.coefficients = m.dipoles, m.interior, m.coefficients
            self.fit = float(np.max(m.fit_residuals)) if len(m.fit_residuals) else 0.0
        self.strain = float(np.sum(m.strain_power) ** (1.0 / q))
        self.moment = float(np.sum(m.moment_power) ** (1.0 / q))

    def apply(self, fld: FlowField, gamma: float) -> FlowField:
        dip = fld.dipoles - gamma * self.dipoles
        if self.coefficients is None:
            return fld.with_terms(dip, fld.collocation, fld.interior, fld.rigid)
        n = fld.n
        coll = np.zeros((n, self.coefficients.shape[1])) if fld.collocation is None else fld.collocation
        inner = np.zeros((n, 3, 3, 3)) if fld.interior is None else fld.interior
        return fld.with_terms(dip, coll - gamma * self.coefficients, inner - gamma * self.interior, fld.rigid)


def reflection_step(fld: FlowField, cfg: ParticleConfig, opts: SolverOptions,
                    gamma: float | None = None, quad: SphereQuadrature | None = None) -> FlowField:
    """One simultaneous update: every correction is computed from ``fld`` before any is applied.

    ``gamma`` overrides ``opts.gamma``; 0 returns an unchanged field.
    """
    _check_consistent(fld, cfg)
    g = opts.gamma if gamma is None else float(gamma)
    if not 0.0 <= g <= 1.0:
        raise InvalidInputError(f"gamma must lie in [0, 1], got {g}")
    quad = quad or opts.quadrature()
    data = _StepData(fld, opts, quad)
    new = data.apply(fld, g)
    if not np.all(np.isfinite(new.dipoles)):
        raise DivergenceError("non-finite dipole coefficient after reflection step", field=new)
    return new


def run(cfg: ParticleConfig, ambient: AmbientField, opts: SolverOptions | None = None):
    """Iterate from the ambient flow until r_k <= tol * r_0 or the iteration budget is spent.

    Returns (field, report). Raises :class:`DivergenceError` carrying both
    when r_k exceeds ``divergence_factor * r_0`` or a coefficient turns
    non-finite.
    """
    opts = opts or SolverOptions()
    rep = validate_config(cfg)
    if not rep.disjoint:
        raise OverlapError(f"overlapping particles: {rep.overlapping}")
    if not rep.theta_max > 1.0:
        raise SeparationError(f"configuration is not theta-separated (theta_max = {rep.theta_max})")
    quad = opts.quadrature()
    fld = FlowField.empty(ambient, cfg)
    report = IterationReport(opts, cfg.phi0, cfg.n, history=[] if opts.keep_history else None)
    k = 0
    while True:
        t0 = time.perf_counter()
        data = _StepData(fld, opts, quad)
        report.strain_residuals.append(data.strain)
        report.moment_residuals.append(data.moment)
        r = data.moment if opts.residual == "moment" else data.strain
        report.residuals.append(r)
        if report.history is not None:
            report.history.append(fld.dipoles.copy())
        r0 = report.residuals[0]
        if not math.isfinite(r) or (k > 0 and r > opts.divergence_factor * r0):
            report.terminated = "div"
            finite = [v for v in report.residuals if math.isfinite(v)]
            report.rho = fit_rate(finite, opts.window, opts.discard)
            raise DivergenceError(f"residual {r:.3e} exceeds {opts.divergence_factor:g} r_0 = "
                                  f"{opts.divergence_factor * r0:.3e} at iteration {k}",
                                  report=report, field=fld)
        if r <= opts.tol * r0:
            report.terminated = "tol"
            break
        if k >= opts.max_iterations:
            report.terminated = "max"
            break
        upd = opts.gamma * data.dipoles
        report.max_updates.append(float(np.max(np.sqrt(np.einsum("nij,nij->n", upd, upd)))))
        if data.fit is not None:
            report.fit_residuals.append(data.fit)
        fld = data.apply(fld, opts.gamma)
        report.timings.append(time.perf_counter() - t0)
        if not np.all(np.isfinite(fld.dipoles)):
            report.terminated = "div"
            raise DivergenceError(f"non-finite dipole coefficient at iteration {k + 1}",
                                  report=report, field=fld)
        k += 1
    report.rho = fit_rate(report.residuals, opts.window, opts.discard)
    return fld, report
