# tests/test_radial_solver.py
import math

import numpy as np
import pytest

from conftest import make_small_spec
from models.core import Grid3, PreconditionError, SimParams, StabilityError
from models.harness import get_builtin
from models.radial_solver import (RadialSolution, RadialState, initial_radial_state,
                                  lift_profile, lift_radial_to_3d, load_radial_solution,
                                  radial_step, run_radial, save_radial_solution,
                                  stable_radial_dt, training_save_times)


def gaussian_profile(r, sigma2):
    return (2 * math.pi * sigma2) ** -1.5 * np.exp(-r ** 2 / (2 * sigma2))


def advance(state, params, t_end, dt_max=math.inf):
    while state.time < t_end - 1e-12:
        dt = min(stable_radial_dt(state, params), dt_max, t_end - state.time)
        state = radial_step(state, params, dt)
    return state


def test_zero_density_leaves_concentration_unchanged():
    r = np.arange(32) * 0.5
    conc = np.exp(-r ** 2 / 20)
    state = RadialState(r, np.zeros(32), conc, 0.0)
    new = radial_step(state, SimParams(), 0.01)
    assert np.array_equal(new.conc, conc)
    assert np.array_equal(new.rho, np.zeros(32))
    assert new.time == pytest.approx(0.01)


def test_pure_diffusion_matches_heat_kernel():
    r = np.arange(300) * 0.25
    state = RadialState(r, gaussian_profile(r, 25.0), np.zeros_like(r), 0.0)
    params = SimParams(gamma=1.0, chi=1.0)
    final = advance(state, params, 5.0)
    exact = gaussian_profile(r, 25.0 + 2.0 * 5.0)
    err = np.linalg.norm(final.rho - exact) / np.linalg.norm(exact)
    assert err < 0.01


def test_decoupled_consumption_is_exponential_decay():
    r = np.arange(64) * 0.5
    rho = 0.5 * np.exp(-r ** 2 / 50)
    conc = np.exp(-r ** 2 / 100)
    params = SimParams(gamma=0.0, chi=0.0)
    final = advance(RadialState(r, rho, conc, 0.0), params, 1.0, dt_max=0.01)
    assert np.array_equal(final.rho, rho)
    assert np.allclose(final.conc, conc * np.exp(-rho * 1.0), rtol=5e-3)


def test_stable_dt_respects_every_bound():
    spec = get_builtin("one_blob")
    state = initial_radial_state(spec)
    dt = stable_radial_dt(state, spec.params)
    assert dt <= 0.25 * state.dr ** 2 / spec.params.gamma
    assert dt <= 1.0 / state.rho.max()


def test_radial_state_validation():
    with pytest.raises(PreconditionError):
        RadialState(np.arange(4.0), np.zeros(4), np.zeros(4))
    with pytest.raises(StabilityError):
        RadialState(np.arange(8.0), -np.ones(8), np.zeros(8))
    with pytest.raises(ValueError):
        RadialSolution((RadialState(np.arange(8.0), np.zeros(8), np.zeros(8), 1.0),
                        RadialState(np.arange(8.0), np.zeros(8), np.zeros(8), 1.0)), SimParams())


def test_zero_save_time_returns_initial_state():
    spec = get_builtin("one_blob")
    sol = run_radial(spec, save_times=[0.0])
    assert len(sol.states) == 1
    initial = initial_radial_state(spec)
    assert np.array_equal(sol.states[0].rho, initial.rho)
    assert np.array_equal(sol.states[0].conc, initial.conc)
    assert sol.states[0].r[-1] == pytest.approx(100.0 * math.sqrt(3) / 2)
    assert len(sol.states[0].r) == 512


def test_default_scenario_conserves_radial_mass_and_consumes_c():
    spec = get_builtin("one_blob")
    sol = run_radial(spec, save_times=[0.0, 10.0, 20.0, 40.0])
    assert sol.times == [0.0, 10.0, 20.0, 40.0]
    m0 = sol.states[0].mass()
    for state in sol.states[1:]:
        assert abs(state.mass() - m0) / m0 < 0.01
    for earlier, later in zip(sol.states, sol.states[1:]):
        assert np.all(later.conc <= earlier.conc)
        assert later.rho.min() >= 0


def test_non_radial_scenario_is_rejected():
    with pytest.raises(PreconditionError):
        run_radial(get_builtin("two_blob"), save_times=[1.0])


def test_lift_constant_profile_is_constant():
    grid = Grid3(16.0, 8)
    r = np.linspace(0, 20, 50)
    field = lift_profile(r, np.full(50, 3.0), grid, (8.0, 8.0, 8.0))
    assert np.all(field.values == 3.0)


def test_lift_is_symmetric_about_the_grid_center():
    grid = Grid3(16.0, 16)
    r = np.linspace(0, 20, 200)
    values = lift_profile(r, np.exp(-r), grid, (8.0, 8.0, 8.0)).values
    for axes in [(1, 0, 2), (0, 2, 1), (2, 1, 0)]:
        assert np.allclose(values, values.transpose(axes), rtol=0, atol=1e-12)


def test_lift_reproduces_linear_profiles():
    grid = Grid3(16.0, 16)
    center = np.array([3.0, 5.0, 7.0])
    r = np.linspace(0, 30, 301)
    values = lift_profile(r, r, grid, center).values
    dist = np.linalg.norm(grid.center_points() - center, axis=1).reshape(grid.shape)
    assert np.allclose(values, dist, rtol=0, atol=1e-12)


def test_lift_radial_to_3d_returns_both_variables():
    spec = make_small_spec()
    state = initial_radial_state(spec, m=64)
    rho, conc = lift_radial_to_3d(state, spec.grid, spec.domain_center)
    assert rho.grid == spec.grid and conc.grid == spec.grid
    assert conc.max() <= 1.0 and rho.min() >= 0


def test_saved_solution_loads_back(tmp_path):
    spec = make_small_spec()
    sol = run_radial(spec, m=64, save_times=[0.0, 0.25, 0.5])
    save_radial_solution(sol, tmp_path / "radial")
    back = load_radial_solution(tmp_path / "radial")
    assert back.times == sol.times
    assert back.params == sol.params
    for a, b in zip(sol.states, back.states):
        assert np.array_equal(a.rho, b.rho) and np.array_equal(a.conc, b.conc)
        assert np.allclose(a.r, b.r, rtol=0, atol=1e-12)


def test_missing_solution_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_radial_solution(tmp_path / "nowhere")


def test_training_save_times_are_distinct_and_in_range():
    times = training_save_times(40.0, 50, np.random.default_rng(0))
    assert len(times) == 50
    assert times == sorted(times)
    assert all(0.0 < t <= 40.0 for t in times)


def test_halving_dr_cuts_the_error_about_fourfold():
    spec = get_builtin("one_blob")
    reference = run_radial(spec, m=961, save_times=[1.0]).states[-1]

    def error(m, stride):
        state = run_radial(spec, m=m, save_times=[1.0]).states[-1]
        ref = reference.rho[::stride]
        assert np.allclose(state.r, reference.r[::stride], rtol=0, atol=1e-9)
        return np.linalg.norm(state.rho - ref) / np.linalg.norm(ref)

    coarse, fine = error(121, 8), error(241, 4)
    assert fine < coarse
    assert coarse / fine > 3.0
