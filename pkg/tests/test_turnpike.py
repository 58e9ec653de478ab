import dataclasses

import numpy as np
import pytest

from phturnpike.errors import DimensionMismatch, HorizonTooShort, NoGap
from phturnpike.ocp_solver import ControlSet, OCPProblem, solve
from phturnpike.ph_models import PHSystem
from phturnpike.simulate import ControlSignal, TimeGrid, Trajectory, hamiltonian, simulate
from phturnpike.turnpike import (bound_estimate, control_coast_mean, default_phase_length, field_split,
                                 midpoint_dist, reachable_dimension, steer, steering_correction,
                                 three_phase_control, turnpike_bound, turnpike_metric, turnpike_report)

from .conftest import sin_profile


@pytest.fixture
def toy():
    return PHSystem.from_matrices(np.zeros((2, 2)), np.eye(2), [[1.0], [0.0]], name="toy")


def constant_trajectory(x, grid, midpoints=True):
    states = np.tile(x, (grid.N + 1, 1))
    mids = np.tile(x, (grid.N, 1)) if midpoints else None
    return Trajectory(states, grid, mids)


def test_default_phase_length():
    assert default_phase_length(5.0) == 1.25
    assert default_phase_length(40.0) == 2.0


def test_bound_vanishes_at_rest(toy):
    G, F = turnpike_bound(toy, np.zeros(2), None, 0.0, 0.0, ControlSet.box(1.0, 1))
    assert G == 0.0 and F == 0.0


def test_bound_by_hand(toy):
    # H = 2, then ||B|| T0 u_max (||x0|| + ||B|| T0 u_max) = 1 * (2 + 1)
    G, F = turnpike_bound(toy, np.array([2.0, 0.0]), None, 1.0, 0.0, ControlSet.box(1.0, 1))
    assert G == pytest.approx(5.0)
    assert F == pytest.approx(5.0)
    G, _ = turnpike_bound(toy, np.array([2.0, 0.0]), None, 1.0, 1.0, ControlSet.box(1.0, 1))
    assert G == pytest.approx(6.0)


def test_bound_uses_ball_radius(toy):
    G, _ = turnpike_bound(toy, np.zeros(2), None, 0.0, 2.0, ControlSet.ball(0.5, 1))
    assert G == pytest.approx(1.0)


def test_bound_needs_spectral_gap():
    sys = PHSystem.from_matrices([[0.0, 1.0], [-1.0, 0.0]], np.zeros((2, 2)), [[1.0], [0.0]])
    with pytest.raises(NoGap):
        turnpike_bound(sys, np.ones(2), None, 1.0, 1.0, ControlSet.box(1.0, 1))


def test_steering_correction(toy):
    uset = ControlSet.box(1.0, 1)
    assert steering_correction(toy, 0.0, 1.0, uset) == 0.0
    assert steering_correction(toy, 0.1, 1.0, uset) == pytest.approx(0.005 + 0.1)


def test_metric_is_zero_in_the_kernel(diffusion):
    grid = TimeGrid(2.0, 10)
    traj = simulate(diffusion, np.full(21, 2.0), ControlSignal.zeros(grid, 1))
    assert turnpike_metric(traj, diffusion.kernel_projector, diffusion.weights) <= 1e-20


@pytest.mark.parametrize("midpoints", [True, False])
def test_metric_of_constant_trajectory(midpoints):
    P = np.diag([1.0, 0.0])
    traj = constant_trajectory(np.array([5.0, 3.0]), TimeGrid(2.0, 10), midpoints)
    assert turnpike_metric(traj, P) == pytest.approx(2.0 * 9.0)
    assert turnpike_metric(traj, P, ip=0.5) == pytest.approx(2.0 * 4.5)


def test_metric_checks_projector_shape():
    traj = constant_trajectory(np.ones(3), TimeGrid(1.0, 4))
    with pytest.raises(DimensionMismatch):
        turnpike_metric(traj, np.eye(2))


def test_midpoint_distance():
    P = np.diag([1.0, 0.0])
    grid = TimeGrid(1.0, 4)
    states = np.zeros((5, 2))
    states[2] = [7.0, 2.0]
    assert midpoint_dist(Trajectory(states, grid), P) == pytest.approx(4.0)


def test_steer_zero_to_zero(small_diffusion):
    u, error = steer(small_diffusion, np.zeros(5), np.zeros(5), 1.0, 10, ControlSet.box(1.0, 1))
    assert error == 0.0
    assert np.all(u.values == 0.0)


def test_steer_never_loses_to_free_decay(diffusion):
    grid = TimeGrid(1.25, 63)
    x0 = sin_profile(diffusion)
    uset = ControlSet.box(10.0, 1)
    free = simulate(diffusion, x0, ControlSignal.zeros(grid, 1)).final
    u, error = steer(diffusion, x0, np.zeros(21), grid.T, grid.N, uset)
    assert uset.contains(u.values)
    assert error <= np.sqrt(diffusion.h) * np.linalg.norm(free) + 1e-12
    assert error < 0.5 * np.sqrt(diffusion.h) * np.linalg.norm(free)


def test_steer_reports_unreachable_part(toy):
    x0 = np.array([1.0, 1.0])
    grid = TimeGrid(1.0, 10)
    u, error = steer(toy, x0, np.zeros(2), 1.0, 10, ControlSet.box(10.0, 1))
    free = simulate(toy, x0, ControlSignal.zeros(grid, 1)).final
    assert error == pytest.approx(free[1], rel=1e-6)


def test_three_phase_at_rest(small_diffusion):
    tp = three_phase_control(small_diffusion, np.zeros(5), np.zeros(5), 4.0, 1.0, 1.0, 40,
                             ControlSet.box(1.0, 1))
    assert np.all(tp.control.values == 0.0)
    assert tp.terminal_error == 0.0
    assert tp.coast == (1.0, 3.0)


def test_three_phase_rejects_short_horizon(small_diffusion):
    with pytest.raises(HorizonTooShort):
        three_phase_control(small_diffusion, np.ones(5), np.ones(5), 1.0, 0.6, 0.6, 10, ControlSet.box(1.0, 1))


def test_three_phase_rounds_to_whole_intervals(small_diffusion):
    tp = three_phase_control(small_diffusion, np.ones(5), np.ones(5), 1.0, 0.24, 0.31, 10,
                             ControlSet.box(1.0, 1))
    assert tp.T0 == pytest.approx(0.2)
    assert tp.T1 == pytest.approx(0.3)


def test_three_phase_coasts_without_gaining_energy(small_diffusion):
    sys = small_diffusion
    x0 = sin_profile(sys)
    tp = three_phase_control(sys, x0, np.full(5, 2.0), 4.0, 1.0, 1.0, 40, ControlSet.box(10.0, 1))
    assert np.all(tp.control.values[10:30] == 0.0)
    H = hamiltonian(sys, tp.trajectory.states[10:31])
    assert np.all(np.diff(H) <= 1e-12 * max(1.0, H[0]))
    assert tp.intermediate_error >= 0.0


def test_reachable_dimension(decoupled, small_diffusion):
    assert reachable_dimension(decoupled, TimeGrid(1.0, 10)) == 1
    # only the mirror-symmetric cell profiles are driven by the centre actuator
    assert reachable_dimension(small_diffusion, TimeGrid(1.0, 20)) == 3


def test_field_split(small_timoshenko):
    grid = TimeGrid(3.0, 30)
    traj = simulate(small_timoshenko, np.ones(small_timoshenko.n), ControlSignal.zeros(grid, 2))
    split = field_split(small_timoshenko, traj)
    assert list(split) == list(small_timoshenko.grid.fields)
    for name, entry in split.items():
        assert entry['coast_mean'] >= 0.0
        assert entry['initial'] == pytest.approx(small_timoshenko.h * small_timoshenko.n / 4)


def test_control_coast_mean():
    grid = TimeGrid(3.0, 9)
    values = np.zeros((9, 2))
    values[3:6] = [3.0, 4.0]
    assert control_coast_mean(ControlSignal(values, grid)) == pytest.approx(5.0)


def test_bound_estimate(small_diffusion):
    sys = small_diffusion
    x0 = sin_profile(sys)
    est = bound_estimate(sys, x0, np.full(5, 2.0), TimeGrid(4.0, 40), ControlSet.box(10.0, 1))
    assert est.T0 == est.T1 == pytest.approx(1.0)
    assert est.F == pytest.approx(est.G / sys.spectral.sigma_plus)
    assert est.G >= hamiltonian(sys, x0)
    assert est.correction == pytest.approx(steering_correction(sys, est.steering_error, est.T1,
                                                               ControlSet.box(10.0, 1)))
    assert set(est.to_dict()) >= {'G', 'F', 'steering_error', 'correction_ratio', 'steering_within_tol'}


def test_report_requires_convergence(small_diffusion):
    x = np.full(5, 2.0)
    result = solve(OCPProblem(small_diffusion, x, x, TimeGrid(2.0, 20), ControlSet.box(10.0, 1)))
    report = turnpike_report(small_diffusion, result, 1.0, 1.0)
    assert report.bound_satisfied
    assert report.integral_metric <= 1e-20
    stale = turnpike_report(small_diffusion, dataclasses.replace(result, converged=False), 1.0, 1.0)
    assert not stale.bound_satisfied


@pytest.mark.parametrize("T, N", [(5.0, 251), (10.0, 501)])
def test_optimum_undercuts_the_three_phase_competitor(diffusion, T, N):
    grid = TimeGrid(T, N)
    uset = ControlSet.box(10.0, 1)
    x0, xT = sin_profile(diffusion), np.full(21, 2.0)
    est = bound_estimate(diffusion, x0, xT, grid, uset)
    result = solve(OCPProblem(diffusion, x0, xT, grid, uset))
    assert result.converged
    assert result.cost_equiv <= est.three_phase_cost
    assert est.three_phase_cost <= est.G + est.correction
