"""Tests for immersed linear elasticity: assembly, constraints, loads and solves."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from igatd.cutquad import material_field
from igatd.elasticity import (
    DisplacementField,
    ElasticMaterial,
    PointLoad,
    SolverError,
    SparseSolver,
    StiffnessAssembler,
    apply_dirichlet,
    apply_point_load,
    assemble,
    cost,
    displacement_gradient,
    edge_dofs,
    energy_density,
    point_load_vector,
    solve,
    strain_energy_density,
)
from igatd.geometry import QuarterRing, Rectangle
from igatd.levelset import LevelSetField, classify_elements, init_constant
from igatd.spline import build_collocation_system, make_space

MAT = ElasticMaterial(1.0, 1.0 / 3.0)


def cantilever(ne, p, alpha=None, geometry=None):
    space = make_space(ne, p)
    geometry = geometry or Rectangle(2, 1)
    if alpha is None:
        alpha = np.ones(space.num_elements)
    system = assemble(space, geometry, MAT, alpha)
    system = apply_dirichlet(system, "left")
    return apply_point_load(system, PointLoad((1.0, 0.5), (0.0, -1.0), 1.0))


def interpolate_displacement(space, geometry, ux, uy):
    """Coefficients (component-major) interpolating a physical field at the Greville grid."""
    colloc = build_collocation_system(space)

    def comp(f):
        return colloc.interpolate(lambda xi, eta: f(*geometry.map_point(xi, eta)))

    return np.concatenate([comp(ux).ravel(), comp(uy).ravel()])


class TestMaterial:
    def test_lame_parameters(self):
        assert MAT.mu == pytest.approx(0.375)
        assert MAT.lam == pytest.approx(0.75)

    @pytest.mark.parametrize("E,nu", [(0.0, 0.3), (1.0, 0.5), (1.0, -0.1)])
    def test_invalid(self, E, nu):
        with pytest.raises(ValueError):
            ElasticMaterial(E, nu)

    def test_load_direction_must_be_unit(self):
        with pytest.raises(ValueError):
            PointLoad((1.0, 0.5), (1.0, 1.0))


class TestAssemble:
    def test_rigid_translation(self):
        system = assemble(make_space(6, 2), QuarterRing(), MAT, np.ones((6, 6)))
        Ku = system.K @ np.ones(system.K.shape[0])
        assert np.max(np.abs(Ku)) <= 1e-9 * abs(system.K).max()

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_symmetric(self, p):
        alpha = np.random.default_rng(p).uniform(1e-4, 1, (5, 5))
        K = assemble(make_space(5, p), QuarterRing(), MAT, alpha).K
        assert abs(K - K.T).max() <= 1e-12 * abs(K).max()

    def test_checkerboard_positive_definite(self):
        ne = 6
        alpha = np.where(np.add.outer(np.arange(ne), np.arange(ne)) % 2 == 0, 1.0, 1e-4)
        system = apply_dirichlet(assemble(make_space(ne, 2), Rectangle(), MAT, alpha), "left")
        free = ~system.fixed
        Kff = system.K[free][:, free].toarray()
        np.linalg.cholesky(Kff)
        assert np.linalg.eigvalsh(Kff).min() > 0

    def test_linear_in_alpha(self):
        space = make_space(4, 2)
        asm = StiffnessAssembler(space, Rectangle(), MAT)
        a1 = np.random.default_rng(0).random((4, 4))
        a2 = np.random.default_rng(1).random((4, 4))
        lhs = asm.matrix(2 * a1 + 3 * a2)
        rhs = 2 * asm.matrix(a1) + 3 * asm.matrix(a2)
        assert abs(lhs - rhs).max() <= 1e-13 * abs(lhs).max()

    def test_free_restriction(self):
        space = make_space(4, 2)
        asm = StiffnessAssembler(space, Rectangle(), MAT)
        free = np.ones(asm.ndof, dtype=bool)
        free[edge_dofs(space, "left")] = False
        alpha = np.random.default_rng(2).random((4, 4))
        full = asm.matrix(alpha)
        np.testing.assert_allclose(asm.matrix(alpha, free).toarray(), full[free][:, free].toarray(), atol=1e-14)


class TestPatch:
    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    @pytest.mark.parametrize("ne", [2, 5])
    def test_linear_field_reproduced(self, p, ne):
        space = make_space(ne, p)
        geom = Rectangle(2, 1)

        def ux(x, y):
            return 0.3 + x - 0.2 * y

        def uy(x, y):
            return -0.1 + 0.4 * x + 0.7 * y

        exact = interpolate_displacement(space, geom, ux, uy)
        system = assemble(space, geom, MAT, np.ones((ne, ne)))
        for edge in ("left", "right", "bottom", "top"):
            system = apply_dirichlet(system, edge, exact)
        u = solve(system)
        np.testing.assert_allclose(u.vector, exact, atol=1e-8)
        xi, eta = np.random.default_rng(p).random((2, 30))
        x, y = geom.map_point(xi, eta)
        np.testing.assert_allclose(u(xi, eta), [ux(x, y), uy(x, y)], atol=1e-8)

    def test_uniaxial_patch_energy_density(self):
        # plane-strain uniaxial stress: sigma_yy = 0 when eps_yy = -nu / (1 - nu) eps_xx
        space = make_space(3, 2)
        geom = Rectangle(2, 1)
        nu = MAT.nu
        exact = interpolate_displacement(space, geom, lambda x, y: x, lambda x, y: -nu / (1 - nu) * y)
        system = assemble(space, geom, MAT, np.ones((3, 3)))
        for edge in ("left", "right", "bottom", "top"):
            system = apply_dirichlet(system, edge, exact)
        u = solve(system)
        xi, eta = np.random.default_rng(5).random((2, 40))
        # sigma_xx = E / (1 - nu^2) = 9/8 for E = 1, nu = 1/3
        np.testing.assert_allclose(energy_density(u, geom, MAT, xi, eta), 9 / 8, rtol=1e-10)


class TestDirichlet:
    def test_left_edge_count(self):
        system = apply_dirichlet(assemble(make_space((8, 5), 2), Rectangle(), MAT, np.ones((8, 5))), "left")
        m = 5 + 2
        assert system.fixed.sum() == 2 * m

    def test_ring_bottom_edge_geometry(self):
        space = make_space(6, 2)
        idx = edge_dofs(space, "xi0")
        gu, gv = space.greville_grid()
        m = space.dims[1]
        x, y = QuarterRing(1, 2).map_point(gu[idx // m], gv[idx % m])
        np.testing.assert_allclose(y, 0.0, atol=1e-15)
        assert x.min() == pytest.approx(1.0) and x.max() == pytest.approx(2.0)

    def test_all_edges_zero_load(self):
        space = make_space(5, 2)
        system = assemble(space, Rectangle(), MAT, np.ones((5, 5)))
        for edge in ("xi0", "xi1", "eta0", "eta1"):
            system = apply_dirichlet(system, edge)
        assert np.all(solve(system).vector == 0)

    def test_unknown_edge(self):
        with pytest.raises(ValueError):
            edge_dofs(make_space(3, 1), "diagonal")


class TestPointLoad:
    def test_corner_load(self):
        space = make_space(4, 3)
        F = point_load_vector(space, PointLoad((1.0, 1.0), (-1.0, 0.0), 2.0))
        nz = np.flatnonzero(F)
        assert nz.tolist() == [space.size - 1]
        assert F[nz[0]] == pytest.approx(-2.0)

    @settings(max_examples=30, deadline=None)
    @given(
        x=st.floats(0, 1),
        y=st.floats(0, 1),
        angle=st.floats(0, 2 * np.pi),
        mag=st.floats(0.1, 10),
    )
    def test_resultant(self, x, y, angle, mag):
        space = make_space(5, 2)
        d = (np.cos(angle), np.sin(angle))
        F = point_load_vector(space, PointLoad((x, y), d, mag))
        N = space.size
        assert F[:N].sum() == pytest.approx(mag * d[0], abs=1e-12)
        assert F[N:].sum() == pytest.approx(mag * d[1], abs=1e-12)

    def test_support_at_tip(self):
        space = make_space(8, 2)
        F = point_load_vector(space, PointLoad((1.0, 0.5)))
        n, m = space.dims
        nz = np.flatnonzero(F.reshape(2, n, m)[1])
        i, j = np.divmod(nz, m)
        assert np.all(i == n - 1)
        # bases B_j with eta = 0.5 in the open support (t_j, t_{j+3})
        t = space.space_v.knots
        expect = [k for k in range(m) if t[k] < 0.5 < t[k + 3]]
        assert sorted(j.tolist()) == expect
        assert np.all(F.reshape(2, n, m)[0] == 0)


class TestSolve:
    def test_zero_load(self):
        space = make_space(4, 2)
        system = apply_dirichlet(assemble(space, Rectangle(), MAT, np.ones((4, 4))), "left")
        assert np.all(solve(system).vector == 0)

    def test_residual_and_energy_identity(self):
        system = cantilever(32, 1)
        u = solve(system).vector
        free = ~system.fixed
        r = system.K[free][:, free] @ u[free] - system.F[free]
        assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(system.F)
        uKu = u @ (system.K @ u)
        assert uKu == pytest.approx(system.F @ u, rel=1e-9)

    def test_energy_identity_immersed(self):
        phi = LevelSetField.from_function(make_space(24, 2), lambda x, y: 0.3 - np.hypot(x - 0.5, y - 0.5))
        mats = material_field(phi, classify_elements(phi), 1e-4)
        system = cantilever(24, 2, alpha=mats.alpha)
        u = solve(system).vector
        assert u @ (system.K @ u) == pytest.approx(system.F @ u, rel=1e-9)

    def test_unconstrained_fails(self):
        system = assemble(make_space(3, 1), Rectangle(), MAT, np.ones((3, 3)))
        system = apply_point_load(system, PointLoad((1.0, 0.5)))
        with pytest.raises(SolverError):
            solve(system)

    def test_solver_direct(self):
        A = sp.diags([4.0, 5.0, 6.0]).tocsr()
        x = SparseSolver(A).solve(np.array([4.0, 10.0, 18.0]))
        np.testing.assert_allclose(x, [1, 2, 3])

    def test_tip_displacement_converges(self):
        tips = []
        for ne in (16, 32, 64):
            u = solve(cantilever(ne, 2))
            tips.append(-u(1.0, 0.0)[1])
        assert tips[0] < tips[1] < tips[2]
        assert tips[2] - tips[1] < tips[1] - tips[0]


class TestEnergyDensity:
    def test_rigid_motion(self):
        # translation plus infinitesimal rotation; linear, hence exact in the spline space
        space = make_space(4, 2)
        geom = Rectangle()
        coeffs = interpolate_displacement(space, geom, lambda x, y: 1 - y, lambda x, y: 2 + x)
        u = DisplacementField(space, coeffs.reshape(2, *space.dims))
        xi, eta = np.random.default_rng(0).random((2, 25))
        np.testing.assert_allclose(energy_density(u, geom, MAT, xi, eta), 0.0, atol=1e-20)

    def test_nonnegative_for_solution(self):
        u = solve(cantilever(16, 2, geometry=QuarterRing()))
        xi, eta = np.random.default_rng(1).random((2, 1000))
        assert np.all(energy_density(u, QuarterRing(), MAT, xi, eta) >= 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
    def test_quadratic_form_nonnegative(self, g):
        grad = np.array(g).reshape(2, 2)
        assert strain_energy_density(grad, MAT) >= -1e-12

    def test_gradient_shape(self):
        u = solve(cantilever(4, 2))
        grad = displacement_gradient(u, Rectangle(), np.zeros((3, 2)) + 0.5, np.zeros((3, 2)) + 0.25)
        assert grad.shape == (3, 2, 2, 2)


class TestCost:
    def test_full_material_area_term(self):
        system = cantilever(8, 2)
        u = solve(system)
        phi = init_constant(make_space(8, 2), -1.0)
        mats = material_field(phi, classify_elements(phi), 1e-4)
        compliance = cost(u, mats, 0.0, Rectangle(), MAT)
        assert cost(u, mats, 5.0, Rectangle(), MAT) - compliance == pytest.approx(10.0, rel=1e-12)

    def test_zero_load(self):
        phi = LevelSetField.from_function(make_space(16, 2), lambda x, y: 0.3 - np.hypot(x - 0.5, y - 0.5))
        mats = material_field(phi, classify_elements(phi), 1e-4)
        system = apply_dirichlet(assemble(phi.space, Rectangle(), MAT, mats.alpha), "left")
        u = solve(system)
        area = 2.0 * mats.ratio.sum() / 16**2
        assert cost(u, mats, 5.0, Rectangle(), MAT) == pytest.approx(5 * area, rel=1e-12)

    def test_compliance_equals_work(self):
        system = cantilever(16, 2)
        u = solve(system)
        phi = init_constant(make_space(16, 2), -1.0)
        mats = material_field(phi, classify_elements(phi), 1e-4)
        assert cost(u, mats, 0.0, Rectangle(), MAT) == pytest.approx(system.F @ u.vector, rel=1e-6)
