import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from fracms import fine_solver
from fracms.assembly import assemble_mass, assemble_stiffness
from fracms.fine_solver import DAY, YEAR, DirichletBC, FineState, LinearSolver, TimeGrid, run, step
from fracms.mesh import LEFT


def test_time_grid():
    assert TimeGrid(10 * DAY, 5 * YEAR).n_steps == 183
    assert TimeGrid(1.0, 3.0).n_steps == 3
    assert TimeGrid(1.0, 0.0).n_steps == 0
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0)


def test_equilibrium_is_a_fixed_point(small_mesh, kappam_model):
    bc = DirichletBC.from_markers(small_mesh, {LEFT: 5000.0})
    s = step(FineState(0.0, np.full(small_mesh.n_nodes, 5000.0)), small_mesh, kappam_model, bc, 10 * DAY)
    np.testing.assert_allclose(s.c, 5000.0, rtol=1e-9)
    assert s.t == 10 * DAY


def test_step_matches_dense_oracle(small_mesh, kappa0_model):
    rng = np.random.default_rng(0)
    c = rng.uniform(5000, 10000, small_mesh.n_nodes)
    tau = 5 * DAY
    bc = DirichletBC.from_markers(small_mesh, {LEFT: 5000.0})
    new = step(FineState(0.0, c), small_mesh, kappa0_model, bc, tau).c
    M = assemble_mass(small_mesh, kappa0_model, c).toarray()
    A = assemble_stiffness(small_mesh, kappa0_model, c).toarray()
    Q = M + tau * A
    free = ~bc.mask
    x = np.where(bc.mask, 5000.0, 0.0)
    rhs = (M @ c - Q @ x)[free]
    x[free] = np.linalg.solve(Q[np.ix_(free, free)], rhs)
    np.testing.assert_allclose(new, x, rtol=1e-10)


def test_zero_steps(small_mesh, constant_model):
    c0 = np.ones(small_mesh.n_nodes)
    traj = run(c0, small_mesh, constant_model, DirichletBC.none(small_mesh.n_nodes), TimeGrid(1.0, 0.0))
    assert len(traj) == 1 and np.array_equal(traj[0].c, c0)


def test_runs_are_bitwise_deterministic(small_mesh, kappam_model):
    bc = DirichletBC.from_markers(small_mesh, {LEFT: 5000.0})
    grid = TimeGrid(10 * DAY, 100 * DAY)
    c0 = np.full(small_mesh.n_nodes, 10000.0)
    a = run(c0, small_mesh, kappam_model, bc, grid)
    b = run(c0, small_mesh, kappam_model, bc, grid)
    assert all(np.array_equal(x.c, y.c) for x, y in zip(a, b))


def test_observers_receive_read_only_states(small_mesh, constant_model):
    seen = []

    def obs(n, t, c):
        seen.append((n, t))
        with pytest.raises(ValueError):
            c[0] = 0.0

    run(np.ones(small_mesh.n_nodes), small_mesh, constant_model, DirichletBC.none(small_mesh.n_nodes),
        TimeGrid(2.0, 6.0), observers=[obs])
    assert seen == [(0, 0.0), (1, 2.0), (2, 4.0), (3, 6.0)]


def test_iterative_fallback_matches_direct(small_mesh, constant_model, monkeypatch):
    M = assemble_mass(small_mesh, constant_model)
    Q = M + 1e6 * assemble_stiffness(small_mesh, constant_model)
    b = np.random.default_rng(1).standard_normal(small_mesh.n_nodes)
    direct = LinearSolver(Q).solve(b)
    monkeypatch.setattr(fine_solver, "DIRECT_SOLVE_LIMIT", 0)
    it = LinearSolver(Q)
    assert it.tol == fine_solver.CG_RTOL
    np.testing.assert_allclose(it.solve(b), direct, rtol=1e-7)


def test_source_term_enters_the_load(small_mesh, constant_model):
    n = small_mesh.n_nodes
    tau = 2.0
    f = np.random.default_rng(2).standard_normal(n)
    c0 = np.zeros(n)
    s = step(FineState(0.0, c0), small_mesh, constant_model, DirichletBC.none(n), tau, source=lambda t: f)
    Q = (assemble_mass(small_mesh, constant_model) + tau * assemble_stiffness(small_mesh, constant_model)).toarray()
    np.testing.assert_allclose(s.c, np.linalg.solve(Q, tau * f), rtol=1e-9, atol=1e-12)


def test_drawdown_lower_bound_and_decaying_overshoot(fine_reference, constant_model):
    traj = fine_reference("constant", constant_model)
    assert traj.min() >= 5000.0 * (1 - 1e-12)
    # the mean concentration never increases while the front moves in from the left
    assert np.all(np.diff(traj.mean(axis=1)) <= 1e-9 * 10000)
    # overshoot next to the drained boundary is a first-steps transient
    assert traj[40:].max() <= 10000.0 * (1 + 1e-12)


@pytest.mark.xfail(strict=True, reason="consistent P1 mass makes M + tau A a non M-matrix on right-triangle "
                                       "meshes; the first steps overshoot the initial value by a few percent")
def test_drawdown_upper_bound_at_all_times(fine_reference, constant_model):
    assert fine_reference("constant", constant_model).max() <= 10000.0 * (1 + 1e-6)


@pytest.mark.invariant
@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.floats(1.0, 1e7), st.integers(0, 2**31))
def test_neumann_steps_are_stable_and_conservative(small_mesh, constant_model, tau, seed):
    n = small_mesh.n_nodes
    c = np.random.default_rng(seed).uniform(0, 1e4, n)
    M = assemble_mass(small_mesh, constant_model)
    new = step(FineState(0.0, c), small_mesh, constant_model, DirichletBC.none(n), tau).c
    assert np.sqrt(new @ M @ new) <= np.sqrt(c @ M @ c) * (1 + 1e-12)
    assert np.sum(M @ new) == pytest.approx(np.sum(M @ c), rel=1e-10)
