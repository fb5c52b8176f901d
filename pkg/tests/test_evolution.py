import numpy as np
import pytest
from conftest import circle_problem

from bdflow import evolution as ev
from bdflow.evolution import EvolveControls, FlowMode, FlowState
from bdflow.stationary import ProblemError, mass_of, solve_steady

N = 16


@pytest.fixture(scope="module")
def extinction():
    return circle_problem(N, 2.0, 1.0)


@pytest.fixture(scope="module")
def separable_run(extinction):
    u0 = ev.separable_initial(extinction, np.full(N, 0.5), 1.0)
    return ev.evolve(extinction, u0, FlowMode.PHYSICAL, 2.0, EvolveControls(rtol=1e-7))


def test_normalized_fixed_point_step(extinction):
    phi = np.full(N, 0.5)
    new = ev.step(FlowState.from_field(0.0, phi, 2.0), extinction, FlowMode.NORMALIZED, 0.1)
    np.testing.assert_allclose(new.u, phi, atol=1e-11)


def _final(spec, u0, horizon, dt):
    return ev.evolve(spec, u0, FlowMode.PHYSICAL, horizon, EvolveControls(fixed_dt=dt)).final


@pytest.mark.parametrize("p,a_value,u0,horizon", [(2.0, 1.0, 0.5, 0.5), (0.5, 1.0, 1.0, 1.0)])
def test_separable_profile_first_order(p, a_value, u0, horizon):
    """Exact separable values 0.5 (1 - t) at t = 0.5 and (1 + t)^-2 at t = 1, both 0.25."""
    spec = circle_problem(N, p, a_value)
    coarse = _final(spec, np.full(N, u0), horizon, 1e-3)
    fine = _final(spec, np.full(N, u0), horizon, 5e-4)
    err_coarse = np.abs(coarse - 0.25).max()
    err_fine = np.abs(fine - 0.25).max()
    assert 1.7 <= err_coarse / err_fine <= 2.3
    np.testing.assert_allclose(2 * fine - coarse, 0.25, atol=1e-4)
    np.testing.assert_allclose(fine, 0.25, atol=1e-4)


def test_normalized_from_steady_is_constant(extinction):
    traj = ev.evolve(extinction, np.full(N, 0.5), FlowMode.NORMALIZED, 2.0,
                     EvolveControls(fixed_dt=0.05))
    for name, series in traj.diagnostics.items():
        np.testing.assert_allclose(series, series[0], atol=1e-9, err_msg=name)


def test_separable_Z_linear_and_Tstar(separable_run):
    traj = separable_run
    assert traj.halted == "floor"
    Z = traj.diagnostics["Z"]
    slope = (Z[-1] - Z[0]) / (traj.times[-1] - traj.times[0])
    line = Z[0] + slope * traj.times
    assert np.max(np.abs(Z - line)) <= 1e-6 * np.max(np.abs(Z))
    assert traj.Tstar_estimate == pytest.approx(1.0, rel=0.01)


def test_Tstar_scales_with_c(extinction):
    u0 = ev.separable_initial(extinction, np.full(N, 0.5), 0.3)
    traj = ev.evolve(extinction, u0, FlowMode.PHYSICAL, 1.0, EvolveControls(rtol=1e-6))
    assert traj.Tstar_estimate == pytest.approx(0.3, rel=0.01)


def test_generic_Tstar_inside_separable_bracket(extinction):
    u0 = 0.5 + 0.1 * np.cos(extinction.curve.theta)
    traj = ev.evolve(extinction, u0, FlowMode.PHYSICAL, 3.0, EvolveControls(rtol=1e-6))
    s1, s2 = ev.separable_bracket(extinction, np.full(N, 0.5), u0)
    assert (s1, s2) == pytest.approx((0.8, 1.2))
    assert s1 <= traj.Tstar_estimate <= s2
    # the secant of a convex Z lies on one side of the fit
    fit = ev.fit_Tstar(traj)
    assert fit.rms < 1e-6


def test_comparison_principle(extinction):
    th = extinction.curve.theta
    ctl = EvolveControls(fixed_dt=2e-3)
    low = ev.evolve(extinction, np.full(N, 0.4), FlowMode.PHYSICAL, 0.3, ctl)
    up = ev.evolve(extinction, 0.4 + 0.1 * (1 + np.sin(th)), FlowMode.PHYSICAL, 0.3, ctl)
    assert np.min(up.fields - low.fields) >= -1e-10


def test_mass_law(extinction):
    u0 = 0.5 + 0.1 * np.cos(extinction.curve.theta)
    dt = 1e-3
    traj = ev.evolve(extinction, u0, FlowMode.PHYSICAL, 0.2, EvolveControls(fixed_dt=dt))
    M = traj.diagnostics["M1"]
    flux = traj.fields[1:] @ (extinction.curve.weights * extinction.phi1)
    defect = np.abs(np.diff(M) / dt + extinction.lambda1 * flux)
    assert np.all(defect <= 1e-6 * (1 + np.abs(M[1:])))


def test_mass_conserved_without_potential():
    spec = circle_problem(N, 2.0, 0.0)
    u0 = 1 + 0.3 * np.cos(spec.curve.theta)
    traj = ev.evolve(spec, u0, FlowMode.PHYSICAL, 1.0, EvolveControls(rtol=1e-8))
    M = traj.diagnostics["M1"]
    assert np.max(np.abs(M - M[0])) <= 1e-8 * M[0]


def test_rescaling_branches(extinction, separable_run):
    # w = u / (T - t) inherits the relative error of the extrapolated T
    T = separable_run.Tstar_estimate
    out = ev.rescale_trajectory(separable_run)
    keep = out.times < 3.0
    tol = abs(T - 1.0) / (T - out.meta["t"][keep].max()) + 1e-5
    np.testing.assert_allclose(out.fields[keep], 0.5, rtol=tol)

    neutral = circle_problem(N, 2.0, 0.0)
    traj = ev.evolve(neutral, np.ones(N), FlowMode.PHYSICAL, 0.5, EvolveControls(fixed_dt=0.1))
    resc = ev.rescale_trajectory(traj)
    np.testing.assert_allclose(resc.times, traj.times)
    np.testing.assert_allclose(resc.fields, traj.fields)

    growth = circle_problem(N, 0.5, 1.0)
    traj = ev.evolve(growth, np.ones(N), FlowMode.PHYSICAL, 1.0, EvolveControls(fixed_dt=5e-4))
    resc = ev.rescale_trajectory(traj)
    np.testing.assert_allclose(resc.times, np.log1p(traj.times))
    # first-order time stepping: the deviation is O(dt)
    np.testing.assert_allclose(resc.fields, 1.0, atol=2 * 5e-4)


def test_rescaling_needs_Tstar(extinction):
    with pytest.raises(ProblemError):
        ev.time_factor([0.1], extinction, None)


def test_monitor_H_cases(extinction):
    np.testing.assert_allclose(ev.monitor_H(np.full(N, 0.5), extinction), 2.0, atol=1e-12)
    neutral = circle_problem(N, 2.0, 0.0)
    np.testing.assert_allclose(ev.monitor_H(np.full(N, 3.0), neutral), 0.0, atol=1e-12)
    growth = circle_problem(N, 0.5, 1.0)
    np.testing.assert_allclose(ev.monitor_H(np.ones(N), growth), 1.0, atol=1e-12)


def test_infinite_speed_probe(extinction):
    val = ev.infinite_speed_probe(extinction, np.ones(N), 0.05, EvolveControls(rtol=1e-6))
    assert val > 0
    bump = ev.bump_data(extinction.curve, 1e-4)
    val = ev.infinite_speed_probe(extinction, bump, 0.02, EvolveControls(rtol=1e-6, dt0=1e-10))
    assert val > 0


def test_rejects_nonpositive_data(extinction):
    with pytest.raises(ProblemError):
        ev.evolve(extinction, np.zeros(N))


def test_neutral_normalized_run_conserves_mass():
    spec = circle_problem(N, 2.0, 0.0)
    w0 = 1 + 0.1 * np.cos(spec.curve.theta)
    traj = ev.evolve(spec, w0, FlowMode.NORMALIZED, 10.0, EvolveControls(rtol=1e-8))
    phi = solve_steady(spec, mass_target=mass_of(w0, spec), estimate_energy=False).phi
    np.testing.assert_allclose(traj.final, phi, atol=1e-3)
    assert np.ptp(traj.diagnostics["M1"]) <= 1e-8 * traj.diagnostics["M1"][0]


def test_trajectory_csv(tmp_path, extinction):
    traj = ev.evolve(extinction, np.full(N, 0.5), FlowMode.PHYSICAL, 0.01,
                     EvolveControls(fixed_dt=5e-3))
    path = tmp_path / "t.csv"
    ev.write_trajectory_csv(traj, path, "hash")
    lines = path.read_text().splitlines()
    assert lines[0] == "# hash"
    assert lines[1].split(",")[:7] == ["time", "Z", "G", "I", "min", "max", "M1"]
    assert len(lines) == 2 + len(traj)
    assert float(lines[-1].split(",")[0]) == traj.times[-1]
