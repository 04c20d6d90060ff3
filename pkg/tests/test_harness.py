# tests/test_harness.py
import logging

import numpy as np
import pytest

from conftest import make_small_spec
from models.core import (Grid3, PreconditionError, ScalarField3, ScenarioError, discretize)
from models.fdm3d import FdmState
from models.harness import (BenchReport, ConvergenceReport, bench, builtin_scenarios,
                            compare_methods, converge_particles, converge_timestep,
                            cross_section, fit_slope, get_builtin, make_interpolator,
                            neural_slice, relative_l2, snapshot_metrics)
from models.interp_classical import ClassicalInterpolator
from models.neural_interp import CnnModel, NeuralInterpolator
from models.run_model import get_runs
from models.sipf_engine import run_sipf


def field_of(values, grid=None):
    values = np.asarray(values, dtype=float)
    return ScalarField3(grid or Grid3(float(values.shape[0]), values.shape[0]), values)


def test_relative_l2_values(rng):
    ref = field_of(rng.uniform(0.1, 1.0, size=(4, 4, 4)))
    assert relative_l2(ref, ref) == 0.0
    assert relative_l2(field_of(2 * ref.values), ref) == pytest.approx(1.0)
    assert relative_l2(field_of(np.zeros((4, 4, 4))), ref) == pytest.approx(1.0)


def test_relative_l2_preconditions():
    zero = field_of(np.zeros((4, 4, 4)))
    with pytest.raises(PreconditionError):
        relative_l2(zero, zero)
    with pytest.raises(PreconditionError):
        relative_l2(field_of(np.ones((4, 4, 4))), field_of(np.ones((6, 6, 6))))


def test_fit_slope_recovers_power_law():
    levels = [10, 100, 1000, 10000]
    errors = [3.0 * p ** -0.5 for p in levels]
    assert fit_slope(levels, errors) == pytest.approx(-0.5)


def test_fit_slope_needs_two_nonzero_errors(caplog):
    assert fit_slope([10], [0.1]) is None
    with caplog.at_level(logging.WARNING):
        assert fit_slope([10, 100], [0.1, 0.0]) is None
    assert "zero errors" in caplog.text
    assert fit_slope([1, 2, 4], [0.0, 0.2, 0.1]) == pytest.approx(-1.0)


def test_convergence_report_rows():
    report = ConvergenceReport("particles", [(100, 0.2, 0.1), (400, 0.1, 0.05)], -0.5, -0.5)
    rows = report.rows()
    assert rows[1] == {"level": 400, "err_rho": 0.1, "err_c": 0.05, "slope_rho": -0.5, "slope_c": -0.5}
    with pytest.raises(ValueError):
        ConvergenceReport("space")


def test_builtin_scenarios():
    names = [s.name for s in builtin_scenarios()]
    assert names == ["one_blob", "two_blob", "annuli"]
    for spec in builtin_scenarios():
        assert spec.params.gamma == 1.0 and spec.params.chi == 1.0
        assert spec.params.t_end == 40.0 and spec.params.dt == 0.1
        assert spec.grid == Grid3(100.0, 100)
    with pytest.raises(ScenarioError, match="one_blob"):
        get_builtin("three_blob")


def test_make_interpolator():
    assert isinstance(make_interpolator("sipf-classical"), ClassicalInterpolator)
    model = CnnModel.identity()
    assert isinstance(make_interpolator("sipf-neural", model), NeuralInterpolator)
    with pytest.raises(PreconditionError):
        make_interpolator("sipf-neural")
    with pytest.raises(PreconditionError):
        make_interpolator("fdm")


def test_grid_snapshot_metrics_for_annuli():
    spec = get_builtin("annuli").with_overrides(n=20)
    state = FdmState(discretize(spec, "density"), discretize(spec, "concentration"))
    metrics = snapshot_metrics(state, spec)
    assert metrics["time"] == 0.0
    assert metrics["particles"] is None
    assert metrics["mass"] == pytest.approx(1.0, rel=1e-3)
    assert metrics["center_fraction"] > 0.9
    assert metrics["ring_distance"] > 0
    for axis in "xyz":
        assert metrics[f"var_{axis}"] == pytest.approx(25.0, rel=0.1)


def test_particle_snapshot_metrics(small_spec):
    state = run_sipf(small_spec, 300, ClassicalInterpolator(), save_times=(0.0,))[0]
    metrics = snapshot_metrics(state, small_spec)
    assert metrics["particles"] == 300
    assert metrics["mass"] == pytest.approx(1.0)
    assert metrics["ring_distance"] is None
    assert metrics["rho_min"] >= 0 and metrics["c_max"] <= 1.0


def test_cross_section_picks_the_containing_cell(unit_grid):
    values = np.arange(unit_grid.n ** 3, dtype=float).reshape(unit_grid.shape)
    field = ScalarField3(unit_grid, values)
    assert np.array_equal(cross_section(field, 0, 2.5), values[2])
    assert np.array_equal(cross_section(field, 2, 99.0), values[:, :, -1])
    assert cross_section(field, 1, 0.0).shape == (16, 16)
    with pytest.raises(ValueError):
        cross_section(field, 3, 1.0)


def test_identity_network_slice_matches_raw_slice():
    spec = make_small_spec()
    conc = discretize(spec, "concentration")
    raw, refined = neural_slice(CnnModel.identity(), conc, 2, 16.0)
    assert raw.shape == refined.shape == (16, 16)
    assert np.allclose(refined, raw, rtol=1e-6, atol=1e-9)


def test_particle_convergence_with_one_level(small_spec):
    report = converge_particles(small_spec, ClassicalInterpolator(), [100], 400)
    assert report.axis == "particles"
    assert len(report.samples) == 1
    level, err_rho, err_c = report.samples[0]
    assert level == 100 and err_rho > 0 and err_c > 0
    assert report.slope_rho is None


def test_particle_convergence_preconditions(small_spec):
    with pytest.raises(PreconditionError):
        converge_particles(small_spec, ClassicalInterpolator(), [100, 400], 400)
    with pytest.raises(PreconditionError):
        converge_particles(small_spec, ClassicalInterpolator(), [], 400)


def test_timestep_convergence_at_reference_dt_is_exact(small_spec):
    report = converge_timestep(small_spec, ClassicalInterpolator(), [0.1], 0.1, 200)
    assert report.samples[0][1:] == (0.0, 0.0)
    assert report.slope_rho is None


def test_timestep_convergence_preconditions(small_spec):
    interp = ClassicalInterpolator()
    with pytest.raises(PreconditionError):
        converge_timestep(small_spec, interp, [0.15], 0.1, 200)
    with pytest.raises(PreconditionError):
        converge_timestep(small_spec, interp, [0.05, 0.1], 0.1, 200)
    with pytest.raises(PreconditionError):
        converge_timestep(small_spec, interp, [], 0.1, 200)


def test_compare_methods_rows(small_spec):
    rows = compare_methods(small_spec, 500, ClassicalInterpolator())
    assert [r["time"] for r in rows] == [0.0, pytest.approx(0.5)]
    for row in rows:
        assert row["rel_l2_rho"] > 0
        assert row["rel_l2_c"] >= 0
    # both start from the same discretized concentration
    assert rows[0]["rel_l2_c"] == 0.0


def test_bench_records_every_run(tmp_path):
    db = str(tmp_path / "runs.db")
    spec = make_small_spec()
    report = bench(["fdm", "sipf-classical"], [8], 100, 0.2, spec=spec, db_file=db)
    assert [(r["method"], r["n"], r["P"]) for r in report.rows] == \
        [("fdm", 8, None), ("sipf-classical", 8, 100)]
    assert report.seconds("sipf-classical", 8) > 0
    assert report.rows[1]["steps"] == 2
    with pytest.raises(KeyError):
        report.seconds("sipf-neural")
    runs = get_runs(db_file=db)
    assert len(runs) == 2
    assert runs[0]["method"] == "sipf-classical"


def test_bench_rejects_unknown_methods_and_missing_models():
    with pytest.raises(PreconditionError):
        bench(["spectral"], [8], 10, 0.1, spec=make_small_spec())
    with pytest.raises(PreconditionError):
        bench(["sipf-neural"], [8], 10, 0.1, spec=make_small_spec())


def test_bench_report_rejects_non_positive_time():
    with pytest.raises(ValueError):
        BenchReport().add("fdm", 8, None, 0.0, 1)
