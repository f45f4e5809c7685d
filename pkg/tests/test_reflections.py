import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from stokesmor import (ConfigMismatchError, DivergenceError, FlowField, InvalidInputError, LinearStrain,
                       OverlapError, ParticleConfig, RigidMotion, SolverOptions,
                       SphereQuadrature, Stokeslet, TracelessSym3, apply_Qd, generate_lattice,
                       reflection_step, residual_norm, run)
from stokesmor.reflections import IterationReport, fit_rate, moment_residual

ORACLES = json.loads((Path(__file__).parent / "fixtures" / "oracles.json").read_text())
REGRESSION = json.loads((Path(__file__).parent / "fixtures" / "regression.json").read_text())
SHEAR = LinearStrain(TracelessSym3(xy=0.5))
QUAD = SphereQuadrature()


def pair(d):
    return ParticleConfig(np.array([[0.0, 0, 0], [d, 0, 0]]), np.ones(2))


def small_cluster():
    return ParticleConfig(np.array([[0.0, 0, 0], [3.0, 0.4, 0], [0.5, 3.2, 0.8], [2.9, 3.1, -1.5]]),
                          np.array([1.0, 0.8, 1.1, 0.9]))


class TestOptions:
    @pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"gamma": 1.5}, {"q": 1.0}, {"tol": 0.0},
                                    {"degree": 3}, {"divergence_factor": 0.0}, {"residual": "sup"},
                                    {"max_iterations": -1}, {"window": 1}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            SolverOptions(**kw)

    def test_round_trip_and_unknown_keys(self):
        opts = SolverOptions(gamma=0.5, degree=2)
        assert SolverOptions.from_dict(opts.to_dict()) == opts
        with pytest.raises(InvalidInputError):
            SolverOptions.from_dict({"omega": 1.0})


class TestResidualNorm:
    def test_rigid_field_is_zero(self):
        cfg = small_cluster()
        f = FlowField.empty(RigidMotion([1.0, 2, 3], [0.5, 0.1, -0.2]), cfg)
        assert residual_norm(f, cfg, 2.0, QUAD) <= 1e-12

    def test_single_ball_constant_strain(self):
        cfg = ParticleConfig(np.zeros((1, 3)), np.ones(1))
        got = residual_norm(FlowField.empty(SHEAR, cfg), cfg, 2.0, QUAD)
        assert got == pytest.approx(math.sqrt(4 * math.pi / 3) / math.sqrt(2), rel=1e-12)
        assert got == pytest.approx(ORACLES["residual_single_ball_q2"], rel=1e-12)

    @pytest.mark.parametrize("q", [1.5, 2.0, 3.0, 7.0])
    def test_two_balls_add_in_qth_power(self, q):
        one = ParticleConfig(np.zeros((1, 3)), np.ones(1))
        two = pair(5.0)
        single = residual_norm(FlowField.empty(SHEAR, one), one, q, QUAD)
        assert single == pytest.approx((4 * math.pi / 3) ** (1 / q) / math.sqrt(2), rel=1e-12)
        both = residual_norm(FlowField.empty(SHEAR, two), two, q, QUAD)
        assert both == pytest.approx(2 ** (1 / q) * single, rel=1e-12)

    def test_exponent_must_exceed_one(self):
        cfg = pair(4.0)
        with pytest.raises(InvalidInputError):
            residual_norm(FlowField.empty(SHEAR, cfg), cfg, 1.0, QUAD)

    def test_mismatched_field(self):
        with pytest.raises(ConfigMismatchError):
            residual_norm(FlowField.empty(SHEAR, pair(4.0)), pair(5.0), 2.0, QUAD)


class TestStep:
    def test_single_particle_one_step(self):
        cfg = ParticleConfig(np.array([[1.0, -1.0, 2.0]]), np.array([0.6]))
        f0 = FlowField.empty(SHEAR, cfg)
        f1 = reflection_step(f0, cfg, SolverOptions())
        assert residual_norm(f1, cfg, 2.0, QUAD) <= 1e-10 * residual_norm(f0, cfg, 2.0, QUAD)

    def test_zero_relaxation_is_identity(self):
        cfg = small_cluster()
        f = reflection_step(FlowField.empty(SHEAR, cfg), cfg, SolverOptions())
        g = reflection_step(f, cfg, SolverOptions(), gamma=0.0)
        assert g.dipoles.tobytes() == f.dipoles.tobytes()

    def test_two_particle_ratio_matches_independent_oracle(self):
        cfg = pair(4.0)
        f0 = FlowField.empty(SHEAR, cfg)
        f1 = reflection_step(f0, cfg, SolverOptions())
        oracle = ORACLES["two_particle_shear_d4"]
        full = residual_norm(f1, cfg, 2.0, QUAD) / residual_norm(f0, cfg, 2.0, QUAD)
        mom = moment_residual(f1, cfg, 2.0, QUAD) / moment_residual(f0, cfg, 2.0, QUAD)
        assert full == pytest.approx(oracle["full_ratio"], rel=1e-6)
        assert mom == pytest.approx(oracle["moment_ratio"], rel=1e-6)

    def test_jacobi_consistency(self):
        cfg = small_cluster()
        opts = SolverOptions()
        v = FlowField.empty(Stokeslet([1.0, 0.5, 0], [8.0, 8.0, 8.0]) + SHEAR, cfg)
        v = reflection_step(v, cfg, opts)
        nxt = reflection_step(v, cfg, opts)
        for i in range(cfg.n):
            expected = v.dipoles[i] - apply_Qd(v, i, QUAD).coefficient.matrix
            assert np.allclose(nxt.dipoles[i], expected, rtol=0, atol=1e-15)

    def test_mismatched_field(self):
        with pytest.raises(ConfigMismatchError):
            reflection_step(FlowField.empty(SHEAR, pair(4.0)), pair(4.5), SolverOptions())


class TestRun:
    def test_single_particle_terminates_after_one_step(self):
        cfg = ParticleConfig(np.zeros((1, 3)), np.ones(1))
        _, rep = run(cfg, SHEAR, SolverOptions())
        assert rep.terminated == "tol" and rep.iterations == 1
        assert len(rep.residuals) == rep.iterations + 1

    def test_dilute_lattice_contracts_fast(self):
        _, rep = run(generate_lattice(3, 10.0, 1.0), SHEAR, SolverOptions())
        assert rep.terminated == "tol" and rep.rho < 0.05

    def test_lattice_fixture(self):
        fx = REGRESSION["lattice3_phi0_1e-2"]
        _, rep = run(generate_lattice(3, 100.0 ** (1 / 3), 1.0), SHEAR, SolverOptions())
        assert rep.iterations == fx["iterations"]
        assert rep.rho == pytest.approx(fx["rho"], rel=1e-6)
        assert np.allclose(rep.residuals, fx["residuals"], rtol=1e-6, atol=0)

    def test_near_touching_pair_relaxed_is_non_increasing(self):
        cfg = pair(2.1)
        assert cfg.theta_max == pytest.approx(1.05)
        _, rep = run(cfg, SHEAR, SolverOptions(gamma=0.5, max_iterations=50, tol=1e-300))
        r = np.array(rep.residuals)
        assert len(r) == 51 and np.all(np.diff(r) <= 0)

    def test_max_iterations_termination(self):
        _, rep = run(generate_lattice(2, 4.0, 1.0), SHEAR, SolverOptions(max_iterations=2))
        assert rep.terminated == "max" and rep.iterations == 2
        assert len(rep.max_updates) == 2 and len(rep.timings) == 2

    def test_divergence_guard_keeps_report(self):
        opts = SolverOptions(residual="full", divergence_factor=0.3)
        with pytest.raises(DivergenceError) as info:
            run(pair(2.04), LinearStrain(TracelessSym3(xx=1.0, yy=-0.5)), opts)
        rep = info.value.report
        assert isinstance(rep, IterationReport) and rep.terminated == "div"
        assert rep.residuals[-1] > 0.3 * rep.residuals[0]
        assert info.value.field is not None

    @pytest.mark.parametrize("d", [1.5, 2.0])
    def test_overlapping_or_touching_refused(self, d):
        with pytest.raises(OverlapError):
            run(pair(d), SHEAR)

    def test_report_dict(self):
        _, rep = run(generate_lattice(2, 5.0, 1.0), SHEAR, SolverOptions(keep_history=True))
        d = rep.to_dict()
        for key in ("residuals", "rho", "iterations", "terminated", "phi0", "options"):
            assert key in d
        assert "timings" not in d and "timings" in rep.to_dict(include_timing=True)
        assert len(rep.history) == len(rep.residuals)
        json.dumps(d)

    def test_degree_two_run(self):
        cfg = pair(3.0)
        _, r1 = run(cfg, SHEAR, SolverOptions(max_iterations=6, residual="full"))
        f2, r2 = run(cfg, SHEAR, SolverOptions(degree=2, max_iterations=6, residual="full"))
        assert f2.collocation is not None and len(r2.fit_residuals) == r2.iterations
        # the higher-order truncation leaves a smaller unrepresented strain
        assert r2.residuals[-1] < r1.residuals[-1]


def _history(cfg, ambient, iters=4, **kw):
    _, rep = run(cfg, ambient, SolverOptions(max_iterations=iters, tol=1e-300, keep_history=True, **kw))
    return np.array(rep.history), rep


class TestInvariants:
    def test_linearity_at_every_iteration(self):
        cfg = small_cluster()
        u1 = SHEAR
        u2 = Stokeslet([0.3, -1.0, 0.2], [7.0, -6.0, 5.0])
        a, b = 1.7, -0.4
        h1, _ = _history(cfg, u1)
        h2, _ = _history(cfg, u2)
        h, _ = _history(cfg, a * u1 + b * u2)
        scale = np.abs(h).max()
        assert np.abs(h - (a * h1 + b * h2)).max() <= 1e-12 * scale

    # The surface rule is not rotation invariant, so equivariance holds up to
    # quadrature error: ~3e-10 at theta_max 1.6 with order 17, roundoff with order 35.
    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 10**6))
    def test_rotation_equivariance(self, seed):
        cfg = ParticleConfig(small_cluster().centers * 1.2, small_cluster().radii)
        self._check_equivariance(cfg, Rotation.random(random_state=seed).as_matrix())

    def test_rotation_equivariance_close_cluster_refined_rule(self):
        R = Rotation.random(random_state=0).as_matrix()
        self._check_equivariance(small_cluster(), R, quad_order=35, radial_nodes=16)

    @staticmethod
    def _check_equivariance(cfg, R, **kw):
        amb = SHEAR + Stokeslet([0.3, -1.0, 0.2], [7.0, -6.0, 5.0])
        ramb = SHEAR.rotated(R) + Stokeslet(R @ [0.3, -1.0, 0.2], R @ [7.0, -6.0, 5.0])
        h, _ = _history(cfg, amb, 3, **kw)
        hr, _ = _history(cfg.transformed(rotation=R), ramb, 3, **kw)
        conj = np.einsum("ab,knbc,dc->knad", R, h, R)
        assert np.abs(hr - conj).max() <= 1e-10

    def test_rigid_motion_invariance(self):
        cfg = small_cluster()
        amb = SHEAR + Stokeslet([0.3, -1.0, 0.2], [7.0, -6.0, 5.0])
        h, rep = _history(cfg, amb)
        hr, rep_r = _history(cfg, amb + RigidMotion([1.0, -2.0, 0.5], [0.3, 0.7, -1.1], [2.0, 0, 0]))
        assert np.abs(h - hr).max() <= 1e-12 * np.abs(h).max()
        for a, b in ((rep.residuals, rep_r.residuals), (rep.strain_residuals, rep_r.strain_residuals)):
            assert np.allclose(a, b, rtol=1e-12, atol=0)

    def test_bitwise_rerun(self):
        cfg = small_cluster()
        f1, r1 = run(cfg, SHEAR, SolverOptions())
        f2, r2 = run(cfg, SHEAR, SolverOptions())
        assert f1.dipoles.tobytes() == f2.dipoles.tobytes()
        assert json.dumps(r1.to_dict()) == json.dumps(r2.to_dict())


class TestFitRate:
    def test_exact_geometric(self):
        r = [3.0 * 0.2 ** k for k in range(12)]
        assert fit_rate(r) == pytest.approx(0.2, rel=1e-12)

    def test_uses_last_window_only(self):
        r = [1.0, 0.9, 0.5] + [0.5 * 0.1 ** k for k in range(1, 8)]
        assert fit_rate(r, window=5) == pytest.approx(0.1, rel=1e-10)

    def test_short_history_falls_back(self):
        assert fit_rate([1.0, 1e-16]) == pytest.approx(1e-16)
        assert fit_rate([1.0, 0.0]) == 0.0
        assert math.isnan(fit_rate([1.0]))
