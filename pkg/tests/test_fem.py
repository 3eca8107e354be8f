import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from maghomog.errors import InconsistentConstraints, NoConvergence
from maghomog.fem import (
    DofMap,
    PressureSpace,
    ReferenceElement,
    RigidGroup,
    ScalarField,
    VectorField,
    apply_constraints,
    assemble_divergence,
    assemble_mass,
    assemble_pressure_stabilization,
    assemble_scalar_diffusion,
    assemble_stokes,
    assemble_tensor_viscosity,
    assemble_vector_load,
    build_rigid_groups,
    energy_identity,
    gauss_rule,
    is_symmetric,
    l2_norm,
    minres,
    quadrature_points,
    rigid_columns,
    shape_gradients,
    shape_values,
    solve_direct,
    solve_saddle,
    solve_spd,
    sym_identity,
)
from maghomog.grid import GeometrySpec, assign_material, build_box_mesh, build_unit_cell_mesh

# ------------------------------------------------------------ reference ---


@pytest.mark.parametrize("npts", [2, 3])
def test_gauss_rule_exact_for_polynomials(npts):
    pts, w = gauss_rule(npts, 2)
    assert np.isclose(w.sum(), 1.0)
    deg = 2 * npts - 1
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            exact = 1.0 / ((a + 1) * (b + 1))
            assert np.isclose(w @ (pts[:, 0] ** a * pts[:, 1] ** b), exact)


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_shape_partition_of_unity(xi):
    x = np.array([xi])
    assert np.isclose(shape_values(x).sum(), 1.0)
    assert np.allclose(shape_gradients(x).sum(axis=1), 0.0)


def test_shape_interpolates_nodes():
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float)
    assert np.allclose(shape_values(corners), np.eye(4))


def test_reference_matrices():
    ref = ReferenceElement(np.array([0.5, 0.25]))
    assert np.isclose(ref.mass().sum(), 0.125)
    assert np.allclose(ref.laplacian() @ np.ones(4), 0.0)
    K = ref.sym_grad_form()
    assert np.allclose(K, K.T)
    # rigid rotation about the origin has zero strain energy
    x = np.array([[0, 0], [0.5, 0], [0, 0.25], [0.5, 0.25]])
    rot = np.stack([-x[:, 1], x[:, 0]], axis=1).ravel()
    assert np.allclose(K @ rot, 0.0, atol=1e-14)


# ------------------------------------------------------------- assembly ---


def test_scalar_diffusion_properties():
    m = build_unit_cell_mesh(2, 8)
    mat = assign_material(m, GeometrySpec("layered", (1.0, 3.0)))
    K = assemble_scalar_diffusion(m, mat)
    assert is_symmetric(K)
    assert np.allclose(K @ np.ones(m.n_dof_nodes), 0.0)
    assert np.linalg.eigvalsh(K.toarray()).min() > -1e-12


def test_mass_total_and_linear_field():
    m = build_box_mesh(2, [2.0, 1.0], [8, 4])
    M = assemble_mass(m)
    one = np.ones(m.n_dof_nodes)
    assert np.isclose(one @ M @ one, 2.0)


def test_divergence_of_linear_field():
    m = build_box_mesh(2, [1.0, 1.0], 8)
    X = m.dof_coords
    u = np.stack([2 * X[:, 0], -X[:, 1]], axis=1).ravel()
    B = assemble_divergence(m)
    M = assemble_mass(m)
    # div u = 1 everywhere
    assert np.allclose(B @ u, M @ np.ones(m.n_dof_nodes))


def test_tensor_viscosity_matches_identity_stokes():
    m = build_unit_cell_mesh(2, 6)
    A1 = assemble_tensor_viscosity(m, sym_identity(2), 2.0)
    A2, _, _ = assemble_stokes(m, None, 1.0)
    assert abs(A1 - A2).max() < 1e-13


def test_stabilization_symmetric_psd():
    m = build_unit_cell_mesh(2, 6)
    C = assemble_pressure_stabilization(m)
    assert is_symmetric(C)
    assert np.allclose(C @ np.ones(m.n_dof_nodes), 0.0)
    assert np.linalg.eigvalsh(C.toarray()).min() > -1e-14


# ----------------------------------------------------------- constraints ---


def test_rigid_columns_have_zero_strain():
    x = np.random.default_rng(0).random((10, 3))
    R = rigid_columns(x, np.array([0.3, 0.2, 0.1]))
    assert R.shape == (10, 3, 6)
    # the rotational part is linear in x with a skew-symmetric gradient
    for c in range(3, 6):
        G = np.linalg.lstsq(np.c_[x, np.ones(10)], R[:, :, c], rcond=None)[0][:3].T
        assert np.allclose(G + G.T, 0.0)


def test_dofmap_overlap_raises():
    m = build_unit_cell_mesh(2, 8)
    nodes = np.arange(5)
    g1 = RigidGroup(0, nodes, np.zeros(2))
    g2 = RigidGroup(1, nodes[2:], np.zeros(2))
    with pytest.raises(InconsistentConstraints):
        DofMap(m, 2, rigid_groups=[g1, g2])
    with pytest.raises(InconsistentConstraints):
        DofMap(m, 2, dirichlet_nodes=nodes[:1], rigid_groups=[RigidGroup(0, nodes, np.zeros(2))])


def test_dofmap_sizes_and_translations():
    m = build_unit_cell_mesh(2, 16)
    mat = assign_material(m, GeometrySpec("disk", (1.0, 1.0), radius=0.25))
    groups = build_rigid_groups(m, mat.solid)
    vd = DofMap(m, 2, rigid_groups=groups)
    n_rigid_nodes = groups[0].nodes.size
    assert vd.n_reduced == 2 * (m.n_dof_nodes - n_rigid_nodes) + 3
    A, _, _ = assemble_stokes(m, mat, 1.0)
    Ar = vd.T.T @ A @ vd.T
    for t in vd.translations():
        assert np.allclose(Ar @ t, 0.0, atol=1e-12)
        u = vd.expand(t).reshape(-1, 2)
        assert np.allclose(u, u[0])


# --------------------------------------------------------------- solvers ---


def _spd(n, rng):
    Q = rng.normal(size=(n, n))
    return sp.csr_matrix(Q @ Q.T + n * np.eye(n))


@given(st.integers(0, 10_000))
def test_cg_random_spd(seed):
    rng = np.random.default_rng(seed)
    A = _spd(20, rng)
    b = rng.normal(size=20)
    x = solve_spd(A, b, 1e-12)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_cg_with_nullspace():
    m = build_unit_cell_mesh(2, 8)
    K = assemble_scalar_diffusion(m, 1.0)
    rng = np.random.default_rng(3)
    b = rng.normal(size=m.n_dof_nodes)
    ones = np.ones((1, m.n_dof_nodes))
    x = solve_spd(K, b, 1e-10, nullspace=ones)
    bp = b - b.mean()
    assert np.linalg.norm(K @ x - bp) <= 1e-9 * np.linalg.norm(bp)
    assert abs(x.mean()) < 1e-12


def test_tolerance_range():
    A = sp.identity(3, format="csr")
    with pytest.raises(ValueError):
        solve_spd(A, np.ones(3), 1e-3)
    with pytest.raises(ValueError):
        minres(A, np.ones(3), 0.0)


def test_cg_no_convergence():
    rng = np.random.default_rng(0)
    Q = rng.normal(size=(200, 200))
    A = sp.csr_matrix(Q @ Q.T + 1e-6 * np.eye(200))
    with pytest.raises(NoConvergence) as info:
        solve_spd(A, rng.normal(size=200), 1e-12, maxiter=5, precond="none")
    assert info.value.iterations is not None


@given(st.integers(0, 10_000))
def test_minres_indefinite(seed):
    rng = np.random.default_rng(seed)
    A = _spd(15, rng)
    B = sp.csr_matrix(rng.normal(size=(5, 15)))
    K = sp.bmat([[A, B.T], [B, None]], format="csr")
    b = rng.normal(size=20)
    x = minres(K, b, 1e-11)
    assert np.linalg.norm(K @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_direct_with_nullspace_agrees_with_minres():
    m = build_unit_cell_mesh(2, 8)
    A, B, C = assemble_stokes(m, None, 0.5)
    rng = np.random.default_rng(5)
    f = rng.normal(size=2 * m.n_dof_nodes)
    system = apply_constraints(A, B, C, DofMap(m, 2), PressureSpace(m), f=f)
    u1, p1 = solve_saddle(system, 1e-11, method="minres", viscosity=0.5)
    u2, p2 = solve_saddle(system, 1e-11, method="direct")
    assert np.allclose(u1, u2, atol=1e-8)
    assert np.allclose(p1, p2, atol=1e-8)
    x = solve_direct(system.K, system.rhs, system.nullspace)
    assert np.allclose(system.nullspace @ x, 0.0, atol=1e-10)


# ------------------------------------------------------------------ stokes ---

PI = np.pi


def _mms(X):
    """Stream-function velocity (two Fourier modes), pressure gradient and forcing for eta=1/2."""
    x, y = X[:, 0], X[:, 1]
    s2x, c2x, s2y, c2y = np.sin(2 * PI * x), np.cos(2 * PI * x), np.sin(2 * PI * y), np.cos(2 * PI * y)
    s4x, c4x = np.sin(4 * PI * x), np.cos(4 * PI * x)
    # psi = sin(2 pi x) sin(2 pi y) + 0.5 cos(4 pi x) sin(2 pi y)
    u = np.stack([2 * PI * s2x * c2y + PI * c4x * c2y,
                  -2 * PI * c2x * s2y + 2 * PI * s4x * s2y], axis=1)
    lap = np.stack([-8 * PI ** 2 * 2 * PI * s2x * c2y - 20 * PI ** 2 * PI * c4x * c2y,
                    8 * PI ** 2 * 2 * PI * c2x * s2y - 20 * PI ** 2 * 2 * PI * s4x * s2y], axis=1)
    # p = sin(2 pi x) cos(4 pi y)
    gp = np.stack([2 * PI * c2x * np.cos(4 * PI * y), -4 * PI * s2x * np.sin(4 * PI * y)], axis=1)
    return u, -0.5 * lap - gp


def _mms_error(n):
    m = build_unit_cell_mesh(2, n)
    A, B, C = assemble_stokes(m, None, 0.5)
    F = assemble_vector_load(m, lambda X: _mms(X)[1])
    system = apply_constraints(A, B, C, DofMap(m, 2), PressureSpace(m), f=F)
    u, p, x, info = solve_saddle(system, 1e-10, viscosity=0.5, return_info=True)
    U = VectorField(m, u)
    ref = ReferenceElement(m.h, 3)
    Xq = quadrature_points(m, ref)
    uq = U.at_quadrature(ref)
    ue = _mms(Xq.reshape(-1, 2))[0].reshape(uq.shape)
    return l2_norm(ref, uq - U.mean() - ue), energy_identity(system, x)["defect"]


def test_manufactured_solution_rate():
    e16, d16 = _mms_error(16)
    e32, d32 = _mms_error(32)
    assert np.log2(e16 / e32) >= 1.8
    assert max(d16, d32) <= 1e-9


def test_stokes_zero_forcing_zero_solution():
    m = build_unit_cell_mesh(2, 8)
    A, B, C = assemble_stokes(m, None, 1.0)
    system = apply_constraints(A, B, C, DofMap(m, 2), PressureSpace(m))
    u, p = solve_saddle(system, 1e-10)
    assert np.abs(u).max() == 0.0 and np.abs(p).max() == 0.0


# ------------------------------------------------------------------ fields ---


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_scalar_field_reproduces_linear(a, b, c):
    m = build_box_mesh(2, [1.0, 2.0], [4, 8])
    X = m.dof_coords
    f = ScalarField(m, a * X[:, 0] + b * X[:, 1] + c)
    pts = np.random.default_rng(0).random((7, 2)) * [1.0, 2.0]
    assert np.allclose(f.evaluate(pts), a * pts[:, 0] + b * pts[:, 1] + c)
    assert np.allclose(f.gradient(pts), [a, b])


def test_vector_field_gradient_layout():
    m = build_box_mesh(2, [1.0, 1.0], 4)
    X = m.dof_coords
    v = VectorField(m, np.stack([3 * X[:, 1], -X[:, 0]], axis=1))
    g = v.gradient(np.array([[0.3, 0.6]]))[0]
    assert np.allclose(g, [[0, 3], [-1, 0]])
    assert np.allclose(v.sym_gradient(np.array([[0.3, 0.6]]))[0], [[0, 1], [1, 0]])
