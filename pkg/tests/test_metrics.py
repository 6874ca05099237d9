import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fracms.assembly import assemble_mass, assemble_stiffness, assemble_system
from fracms.metrics import ErrorEvaluator, ErrorReport, MetricsError, relative_errors, weighted_h1, weighted_l2
from fracms.mesh import generate_test_mesh
from fracms.physics import ConstantCoefficients

UNIT = ConstantCoefficients(1.0, 1.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def unit_square():
    return generate_test_mesh((1.0, 1.0), [], 1 / 8)


def quadrature_norms(v, mesh, model):
    """Squared weighted norms summed element by element with exact P1 formulas."""
    l2 = h1 = 0.0
    for tri in mesh.triangles:
        p = mesh.nodes[tri]
        (x0, y0), (x1, y1), (x2, y2) = p
        area = 0.5 * abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
        vt = v[tri]
        l2 += model.a_m * area / 12 * (vt @ vt + vt.sum() ** 2)
        # gradient of the linear interpolant
        G = np.linalg.solve(np.c_[np.ones(3), p], np.eye(3))[1:]
        h1 += model.b_m * area * np.sum((G @ vt) ** 2)
    for (i, j), d in zip(mesh.fracture_edges, mesh.apertures):
        L = np.linalg.norm(mesh.nodes[i] - mesh.nodes[j])
        l2 += model.a_f * d * L / 3 * (v[i] ** 2 + v[i] * v[j] + v[j] ** 2)
        h1 += model.b_f * d * (v[j] - v[i]) ** 2 / L
    return l2, h1


def test_zero_field(small_mesh, constant_model):
    z = np.zeros(small_mesh.n_nodes)
    assert weighted_l2(z, small_mesh, constant_model) == 0.0
    assert weighted_h1(z, small_mesh, constant_model) == 0.0


def test_unit_square_values(unit_square):
    n = unit_square.n_nodes
    assert weighted_l2(np.ones(n), unit_square, UNIT) == pytest.approx(1.0, rel=1e-12)
    assert weighted_h1(unit_square.nodes[:, 0], unit_square, UNIT) == pytest.approx(1.0, rel=1e-12)
    assert weighted_h1(np.full(n, 3.0), unit_square, UNIT) < 1e-7


def test_matches_element_quadrature(small_mesh, constant_model):
    v = np.random.default_rng(0).standard_normal(small_mesh.n_nodes)
    l2, h1 = quadrature_norms(v, small_mesh, constant_model)
    assert weighted_l2(v, small_mesh, constant_model) == pytest.approx(np.sqrt(l2), rel=1e-12)
    assert weighted_h1(v, small_mesh, constant_model) == pytest.approx(np.sqrt(h1), rel=1e-12)


def test_state_dependent_weights(small_mesh, kappa0_model):
    c = np.random.default_rng(1).uniform(5000, 10000, small_mesh.n_nodes)
    v = np.random.default_rng(2).standard_normal(small_mesh.n_nodes)
    M = assemble_mass(small_mesh, kappa0_model, c)
    assert weighted_l2(v, small_mesh, kappa0_model, c) == pytest.approx(np.sqrt(v @ M @ v), rel=1e-14)
    with pytest.raises(ValueError):
        weighted_l2(v, small_mesh, kappa0_model)


@pytest.mark.invariant
@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.integers(0, 2**31), st.just(0.0) | st.floats(1e-6, 1e3) | st.floats(-1e3, -1e-6))
def test_norm_axioms(small_mesh, constant_model, seed, s):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, small_mesh.n_nodes))
    M = assemble_mass(small_mesh, constant_model)
    A = assemble_stiffness(small_mesh, constant_model)
    for norm, W in ((weighted_l2, dict(M=M)), (weighted_h1, dict(A=A))):
        nu, nv = norm(u, small_mesh, constant_model, **W), norm(v, small_mesh, constant_model, **W)
        assert nu >= 0
        assert norm(s * u, small_mesh, constant_model, **W) == pytest.approx(abs(s) * nu, rel=1e-10)
        assert norm(u + v, small_mesh, constant_model, **W) <= (nu + nv) * (1 + 1e-12)


@pytest.mark.invariant
@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(arrays(np.float64, 169, elements=st.floats(-1e4, 1e4)), st.floats(1.0, 1e8))
def test_norms_split_the_step_energy(small_mesh, constant_model, v, tau):
    M = assemble_mass(small_mesh, constant_model)
    A = assemble_stiffness(small_mesh, constant_model)
    Q = assemble_system(M, A, tau)
    energy = v @ (Q @ v)
    split = weighted_l2(v, small_mesh, constant_model, M=M) ** 2 + tau * weighted_h1(v, small_mesh, constant_model,
                                                                                     A=A) ** 2
    assert split == pytest.approx(energy, rel=1e-9, abs=1e-9 * np.abs(v).max() ** 2 * abs(Q).max())


def test_relative_errors(small_mesh, kappam_model):
    c_h = np.random.default_rng(3).uniform(5000, 10000, small_mesh.n_nodes)
    assert relative_errors(c_h, c_h, small_mesh, kappam_model) == (0.0, 0.0)
    l2, h1 = relative_errors(2 * c_h, c_h, small_mesh, kappam_model)
    assert l2 == pytest.approx(100.0, rel=1e-12) and h1 == pytest.approx(100.0, rel=1e-12)


def test_relative_errors_reject_bad_input(small_mesh, constant_model):
    n = small_mesh.n_nodes
    with pytest.raises(MetricsError):
        relative_errors(np.ones(n), np.zeros(n), small_mesh, constant_model)
    # constant reference has zero energy seminorm
    with pytest.raises(MetricsError):
        relative_errors(np.ones(n), np.full(n, 2.0), small_mesh, constant_model, A=0 * assemble_stiffness(
            small_mesh, constant_model))
    with pytest.raises(MetricsError):
        relative_errors(np.ones(n - 1), np.ones(n), small_mesh, constant_model)


def test_evaluator_uses_reference_weights(small_mesh, kappa0_model):
    rng = np.random.default_rng(4)
    ref = rng.uniform(5000, 10000, (3, small_mesh.n_nodes))
    c_ms = ref[2] + rng.standard_normal(small_mesh.n_nodes)
    ev = ErrorEvaluator(small_mesh, kappa0_model, ref)
    assert ev(2, c_ms) == pytest.approx(relative_errors(c_ms, ref[2], small_mesh, kappa0_model), rel=1e-14)


def test_report_csv_round_trip(tmp_path):
    rep = ErrorReport()
    rep.add(0, 0.0, 288, 0.0, 0.0)
    rep.add(183, 183 * 864000.0, 403, 0.5901234567, 7.25)
    rep.write_csv(tmp_path / "errors.csv")
    back = ErrorReport.read_csv(tmp_path / "errors.csv")
    assert back.rows == rep.rows
    assert back.final.dim == 403
    assert (tmp_path / "errors.csv").read_text().splitlines()[0] == "step,time_s,dim,L2a_pct,H1a_pct"
    with pytest.raises(MetricsError):
        rep.add(1, 1.0, 1, -1.0, 0.0)
