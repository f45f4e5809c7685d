import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stokesmor import cli, kernels
from stokesmor.cli import main

REGRESSION = json.loads((Path(__file__).parent / "fixtures" / "regression.json").read_text())
SHEAR_E = [[0, 0.5, 0], [0.5, 0, 0], [0, 0, 0]]


def write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(path)


def particles(*specs):
    return {"particles": [{"center": list(c), "radius": r} for c, r in specs]}


def single():
    return {"config": particles(((0.5, -0.2, 1.0), 0.8)), "ambient": {"type": "linear_strain", "E": SHEAR_E}}


def lattice3():
    return {"config": {"generator": {"kind": "lattice", "n_per_side": 3,
                                     "spacing": 100.0 ** (1 / 3), "radius": 1.0}},
            "seed": 0, "ambient": {"type": "linear_strain", "E": SHEAR_E}}


def divergent_pair():
    return {"config": particles(((0, 0, 0), 1.0), ((2.04, 0, 0), 1.0)),
            "ambient": {"type": "linear_strain", "E": [[1, 0, 0], [0, -0.5, 0], [0, 0, -0.5]]},
            "solver": {"residual": "full", "divergence_factor": 0.3}}


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestValidate:
    def test_valid_lattice(self, tmp_path, capsys):
        assert main(["validate", write(tmp_path, lattice3())]) == cli.EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        assert rep["phi0"] == pytest.approx(1e-2, rel=1e-12) and rep["n"] == 27

    def test_overlapping_pair_names_indices(self, tmp_path, capsys):
        doc = {"config": particles(((0, 0, 0), 1.0), ((5, 0, 0), 1.0), ((1.5, 0, 0), 1.0))}
        assert main(["validate", write(tmp_path, doc)]) == cli.EXIT_CONFIG
        assert "(0, 2)" in capsys.readouterr().err

    def test_malformed_json_reports_position(self, tmp_path, capsys):
        path = write(tmp_path, '{\n  "config": {\n    "particles": []\n    "seed": 1\n}')
        assert main(["validate", path]) == cli.EXIT_INPUT
        assert "scenario.json:4:5" in capsys.readouterr().err

    @pytest.mark.parametrize("doc", [
        {"config": particles(((0, 0, 0), 1.0)), "colour": "red"},
        {"config": {"generator": {"kind": "lattice", "n_per_side": 2, "spacing": 3.0, "radius": 1.0}}},
        {"config": particles(((0, 0, 0), -1.0))},
    ])
    def test_schema_and_input_errors(self, tmp_path, doc):
        assert main(["validate", write(tmp_path, doc)]) == cli.EXIT_INPUT

    def test_missing_file(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.json")]) == cli.EXIT_IO

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == cli.EXIT_INPUT

    def test_generator_failure(self, tmp_path, monkeypatch):
        from stokesmor import geometry
        monkeypatch.setattr(geometry, "POISSON_ATTEMPTS_PER_PARTICLE", 1)
        doc = {"config": {"generator": {"kind": "poisson_disk", "count": 300, "min_gap": 1.0, "radius": 0.2,
                                        "box": {"lo": [0, 0, 0], "hi": [10, 10, 10]}}}, "seed": 1}
        assert main(["validate", write(tmp_path, doc)]) == cli.EXIT_CONFIG


class TestRun:
    def test_single_particle_one_step(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", write(tmp_path, single()), "--out", str(out)]) == cli.EXIT_OK
        header, rows = read_csv(out / "residuals.csv")
        assert header == list(cli.io.RESIDUAL_HEADER)
        assert len(rows) == 2 and float(rows[1][1]) <= 1e-10 * float(rows[0][1])
        rep = json.loads((out / "report.json").read_text())
        assert rep["terminated"] == "tol" and rep["validation"]["n"] == 1
        assert "timings" not in rep
        assert (out / "field.json").exists()

    def test_lattice_fixture(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", write(tmp_path, lattice3()), "--out", str(out)]) == cli.EXIT_OK
        rep = json.loads((out / "report.json").read_text())
        assert rep["rho"] == pytest.approx(REGRESSION["lattice3_phi0_1e-2"]["rho"], rel=1e-6)

    def test_max_iterations(self, tmp_path):
        doc = {**lattice3(), "solver": {"max_iterations": 2}}
        out = tmp_path / "out"
        assert main(["run", write(tmp_path, doc), "--out", str(out)]) == cli.EXIT_MAX_ITER
        assert json.loads((out / "report.json").read_text())["terminated"] == "max"

    def test_divergence_keeps_report(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", write(tmp_path, divergent_pair()), "--out", str(out)]) == cli.EXIT_DIVERGED
        rep = json.loads((out / "report.json").read_text())
        assert rep["terminated"] == "div"
        assert rep["validation"]["theta_max"] == pytest.approx(1.02)
        _, rows = read_csv(out / "residuals.csv")
        assert float(rows[-1][1]) > 0.3 * float(rows[0][1])

    def test_overlap_refused(self, tmp_path):
        doc = {"config": particles(((0, 0, 0), 1.0), ((1.0, 0, 0), 1.0))}
        out = tmp_path / "out"
        assert main(["run", write(tmp_path, doc), "--out", str(out)]) == cli.EXIT_CONFIG
        assert not out.exists()

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", write(tmp_path, single()), "--out", str(blocker / "sub")]) == cli.EXIT_IO

    def test_timing_flag(self, tmp_path):
        out = tmp_path / "out"
        main(["run", write(tmp_path, single()), "--out", str(out), "--timing"])
        assert len(json.loads((out / "report.json").read_text())["timings"]) == 1

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
        assert main(["run", write(tmp_path, single())]) == cli.EXIT_OK
        assert (tmp_path / "env" / "report.json").exists()

    def test_out_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
        main(["run", write(tmp_path, single()), "--out", str(tmp_path / "flag")])
        assert (tmp_path / "flag" / "report.json").exists() and not (tmp_path / "env").exists()

    def test_quad_order_override(self, tmp_path):
        out = tmp_path / "out"
        main(["run", write(tmp_path, single()), "--out", str(out), "--quad-order", "35"])
        assert json.loads((out / "report.json").read_text())["options"]["quad_order"] == 35
        assert main(["run", write(tmp_path, single()), "--out", str(out), "--quad-order", "18"]) == cli.EXIT_INPUT

    def test_threads_flag(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", write(tmp_path, single()), "--out", str(out), "--threads", "1"]) == cli.EXIT_OK
        assert main(["run", write(tmp_path, single()), "--out", str(out), "--threads", "0"]) == cli.EXIT_INPUT

    def test_byte_identical_reruns(self, tmp_path):
        doc = {**lattice3(), "grid": {"lo": [-1, -1, -1], "hi": [1, 1, 1], "shape": [3, 2, 2], "strain": True}}
        path = write(tmp_path, doc)
        for sub in ("a", "b"):
            assert main(["run", path, "--out", str(tmp_path / sub)]) == cli.EXIT_OK
        for name in ("report.json", "residuals.csv", "field.json", "grid.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "stokesmor.cli", "run", write(tmp_path, divergent_pair()),
                               "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == cli.EXIT_DIVERGED and "exceeds" in proc.stderr


class TestSweep:
    def sweep_doc(self, phi0, solver=None):
        doc = {"seed": 0, "sweep": {"family": {"kind": "lattice", "n_per_side": 2}, "phi0": phi0}}
        if solver:
            doc["solver"] = solver
        return doc

    def test_three_point_sweep(self, tmp_path):
        out = tmp_path / "out"
        assert main(["sweep", write(tmp_path, self.sweep_doc([1e-3, 1e-2, 5e-2])), "--out", str(out)]) == 0
        header, rows = read_csv(out / "sweep.csv")
        assert tuple(header) == cli.SWEEP_HEADER and len(rows) == 3
        summary = json.loads((out / "sweep.json").read_text())
        assert 0.7 <= summary["slope"] <= 1.3
        assert summary["family"]["kind"] == "lattice"

    def test_empty_phi0(self, tmp_path, capsys):
        assert main(["sweep", write(tmp_path, self.sweep_doc([]))]) == cli.EXIT_INPUT
        assert "usage error" in capsys.readouterr().err

    def test_seed_required(self, tmp_path):
        doc = self.sweep_doc([1e-2])
        del doc["seed"]
        assert main(["sweep", write(tmp_path, doc)]) == cli.EXIT_INPUT

    def test_divergent_point_flagged(self, tmp_path):
        solver = {"residual": "full", "divergence_factor": 0.25, "max_iterations": 6}
        out = tmp_path / "out"
        assert main(["sweep", write(tmp_path, self.sweep_doc([1e-3, 1e-2, 0.1], solver)), "--out", str(out)]) == 0
        header, rows = read_csv(out / "sweep.csv")
        assert header[-1] == "diverged" and [r[-1] for r in rows] == ["0", "0", "1"]
        summary = json.loads((out / "sweep.json").read_text())
        assert [p["used_in_fit"] for p in summary["points"]] == [True, True, False]
        assert summary["slope"] is not None

    def test_missing_sweep_section(self, tmp_path):
        assert main(["sweep", write(tmp_path, single())]) == cli.EXIT_INPUT


class TestGrid:
    def grid_doc(self, strain=False):
        doc = single()
        doc["grid"] = {"lo": [-1.5, -1.0, 0.0], "hi": [2.5, 1.0, 3.0], "shape": [2, 2, 2], "strain": strain}
        return doc

    def test_matches_direct_kernel_evaluation(self, tmp_path):
        path = write(tmp_path, self.grid_doc())
        out = tmp_path / "out"
        assert main(["run", path, "--out", str(out)]) == cli.EXIT_OK
        fld = json.loads((out / "field.json").read_text())
        assert main(["grid", path, "--field", str(out / "field.json"), "--out", str(tmp_path / "g")]) == 0
        header, rows = read_csv(tmp_path / "g" / "grid.csv")
        assert header == ["x", "y", "z", "ux", "uy", "uz"] and len(rows) == 8
        vals = np.array(rows, dtype=float)
        p = fld["particles"][0]
        direct = kernels.dipole_velocity(np.array(p["dipole"]), np.array(p["center"]), p["radius"], vals[:, :3])
        direct += vals[:, :3] @ np.array(SHEAR_E, dtype=float).T
        assert np.abs(vals[:, 3:] - direct).max() <= 1e-14 * max(1.0, np.abs(direct).max())

    def test_inline_solve_equals_field_route(self, tmp_path):
        path = write(tmp_path, self.grid_doc())
        main(["run", path, "--out", str(tmp_path / "r")])
        main(["grid", path, "--out", str(tmp_path / "inline")])
        assert (tmp_path / "inline" / "grid.csv").read_bytes() == (tmp_path / "r" / "grid.csv").read_bytes()

    def test_interior_point_gets_affine_values(self, tmp_path):
        doc = single()
        doc["grid"] = {"lo": [0.5, -0.2, 1.0], "hi": [0.6, -0.1, 1.1], "shape": [1, 1, 1]}
        out = tmp_path / "out"
        main(["run", write(tmp_path, doc), "--out", str(out)])
        _, rows = read_csv(out / "grid.csv")
        # the single sphere is made rigid: centre velocity equals the ambient there
        x = np.array([0.5, -0.2, 1.0])
        assert np.allclose(np.array(rows[0][3:], dtype=float), np.array(SHEAR_E) @ x, atol=1e-12)

    def test_strain_columns_only_on_request(self, tmp_path):
        main(["grid", write(tmp_path, self.grid_doc(strain=True)), "--out", str(tmp_path / "s")])
        header, _ = read_csv(tmp_path / "s" / "grid.csv")
        assert header == ["x", "y", "z", "ux", "uy", "uz", "exx", "exy", "exz", "eyy", "eyz"]

    def test_singular_point_flagged(self, tmp_path):
        doc = self.grid_doc()
        doc["ambient"] = {"type": "stokeslet", "force": [1, 0, 0], "location": [-1.5, -1.0, 0.0]}
        main(["grid", write(tmp_path, doc), "--out", str(tmp_path / "f")])
        header, rows = read_csv(tmp_path / "f" / "grid.csv")
        assert header[-1] == "flag" and [r[-1] for r in rows].count("1") == 1

    def test_missing_grid_section(self, tmp_path):
        assert main(["grid", write(tmp_path, single())]) == cli.EXIT_INPUT

    def test_bad_field_file(self, tmp_path):
        bad = write(tmp_path, {"ambient": {"type": "rigid"}}, "field.json")
        assert main(["grid", write(tmp_path, self.grid_doc()), "--field", bad]) == cli.EXIT_INPUT
