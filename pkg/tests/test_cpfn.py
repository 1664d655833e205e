import numpy as np
import pytest

from cpcalc import band, cpfn, geometry
from cpcalc.cpfn import (
    OdeSolveConfig,
    cache_cp,
    circle_cp,
    circle_cp_function,
    circle_cp_hat,
    cp_table_to_csv,
    euclidean_cp_curve,
    euclidean_cp_function,
    intrinsic_cp_step,
    levelset_composed_cp,
    levelset_cp_codim1,
    load_cp_table,
    save_cp_table,
)
from cpcalc.errors import OffSurfaceStart, OnAxis
from cpcalc.geometry import (
    LevelSetFn,
    LevelSetSurface,
    curve_point,
    curve_velocity,
    cylinder_paraboloid_curve,
    sphere_plane_circle,
)

from oracles import dense_argmin_on_curve, rk4_fixed_step

RNG = np.random.default_rng(11)
TIGHT = OdeSolveConfig(rel_tol=1e-12, abs_tol=1e-14)


def curve_band_points(n, scale=0.04):
    theta = RNG.uniform(0, 2 * np.pi, n)
    off = RNG.normal(size=(n, 3))
    off /= np.linalg.norm(off, axis=1, keepdims=True)
    return curve_point(theta) + scale * RNG.uniform(0.1, 1.0, (n, 1)) * off


class TestCodim1:
    def test_sphere_closed_form(self):
        phi = geometry.sphere_level_set()
        x = np.array([2.0, 0.0, 0.0])
        out = levelset_cp_codim1(phi, x, TIGHT)
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-11)
        # general points: the flow retracts radially onto x/|x|
        pts = RNG.normal(size=(40, 3))
        pts = pts[np.linalg.norm(pts, axis=1) > 0.4]
        out = levelset_cp_codim1(phi, pts, TIGHT)
        np.testing.assert_allclose(
            out, pts / np.linalg.norm(pts, axis=1, keepdims=True), atol=1e-10
        )

    def test_zero_level_unchanged(self):
        phi = geometry.cylinder_level_set()
        theta = RNG.uniform(0, 2 * np.pi, 10)
        pts = np.stack(
            [RNG.uniform(-1, 1, 10), np.cos(theta), np.sin(theta)], axis=-1
        )
        out = levelset_cp_codim1(phi, pts, TIGHT)
        np.testing.assert_array_equal(out, pts)

    def test_cylinder_against_rk4_oracle(self):
        phi = geometry.cylinder_level_set()
        x = np.array([0.3, 0.2, 1.4])

        def rhs_single(y):
            g = phi.gradient(y[None, :])[0]
            return -g / np.dot(g, g)

        oracle = rk4_fixed_step(rhs_single, x, float(phi.value(x)), step=1e-5)
        out = levelset_cp_codim1(phi, x, TIGHT)
        np.testing.assert_allclose(out, oracle, atol=1e-8)
        assert abs(out[1] ** 2 + out[2] ** 2 - 1.0) < 1e-10

    def test_level_label_is_linear_along_trajectory(self):
        # phi(eta(lam)) = phi(x) - lam by construction; probe the midpoint
        phi = geometry.paraboloid_level_set()
        x = np.array([0.4, -0.3, 0.9])
        lam = float(phi.value(x))
        half = cpfn.integrate_ensemble(
            cpfn._codim1_rhs(phi), x[None, :], np.array([0.5 * lam]), TIGHT
        )[0]
        assert abs(phi.value(half) - 0.5 * lam) < 1e-10

    def test_euclidean_special_case_plane(self):
        # signed distance of a plane: flow equals orthogonal projection
        phi = geometry.plane_level_set(0.25)
        pts = RNG.uniform(-1, 1, (30, 3))
        out = levelset_cp_codim1(phi, pts, TIGHT)
        expected = pts.copy()
        expected[:, 2] = 0.25
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_euclidean_special_case_sphere(self):
        # signed distance of the unit sphere: flow equals radial projection
        def sd(x):
            return np.linalg.norm(x, axis=-1) - 1.0

        def sd_grad(x):
            return x / np.linalg.norm(x, axis=-1, keepdims=True)

        phi = LevelSetFn(func=sd, grad=sd_grad, name="sphere_sd")
        pts = curve_band_points(30) + np.array([0.0, 0.0, -0.4])
        pts = pts[np.linalg.norm(pts, axis=1) > 0.3]
        out = levelset_cp_codim1(phi, pts, TIGHT)
        np.testing.assert_allclose(
            out, pts / np.linalg.norm(pts, axis=1, keepdims=True), atol=1e-10
        )


class TestIntrinsic:
    def test_sphere_plane_closed_form(self):
        # within the unit sphere, the flow toward the plane has the closed
        # form eta(lam, x) = (mu x1, mu x2, x3 - lam), mu^2 = (1-(x3-lam)^2)/(1-x3^2)
        surf = sphere_plane_circle()
        z = np.array([0.6, 0.64, np.sqrt(1 - 0.6**2 - 0.64**2)])
        out = intrinsic_cp_step(surf.phis[1], surf.phis[0], z, TIGHT)
        mu = np.sqrt((1 - 0.25) / (1 - z[2] ** 2))
        np.testing.assert_allclose(
            out, [mu * z[0], mu * z[1], 0.5], atol=1e-10
        )

    def test_point_on_intersection_unchanged(self):
        surf = sphere_plane_circle()
        r = np.sqrt(3) / 2
        z = np.array([r * np.cos(0.4), r * np.sin(0.4), 0.5])
        out = intrinsic_cp_step(surf.phis[1], surf.phis[0], z, TIGHT)
        np.testing.assert_array_equal(out, z)

    def test_off_surface_start_rejected(self):
        surf = sphere_plane_circle()
        with pytest.raises(OffSurfaceStart):
            intrinsic_cp_step(
                surf.phis[1], surf.phis[0], np.array([1.01, 0.0, 0.0]), TIGHT
            )

    def test_cylinder_intrinsic_against_rk4_oracle(self):
        surf = cylinder_paraboloid_curve()
        phi1, phi2 = surf.phis
        z = np.array([0.3, np.sqrt(1 - 0.96**2), 0.96])  # on the cylinder

        def rhs_single(y):
            g1 = phi1.gradient(y[None, :])[0]
            n1 = g1 / np.linalg.norm(g1)
            g2 = phi2.gradient(y[None, :])[0]
            v = g2 - n1 * np.dot(n1, g2)
            return -v / np.dot(v, v)

        oracle = rk4_fixed_step(rhs_single, z, float(phi2.value(z)), step=1e-5)
        out = intrinsic_cp_step(phi2, phi1, z, TIGHT)
        np.testing.assert_allclose(out, oracle, atol=1e-8)
        # trajectory stayed on the cylinder
        assert abs(phi1.value(out)) < 1e-10


class TestComposition:
    def test_circle_ode_matches_closed_form(self):
        surf = sphere_plane_circle(band_tol=0.4)
        cpf = levelset_composed_cp(surf, (0, 1), TIGHT)
        pts = np.array(
            [[0.9, 0.1, 0.6], [0.5, -0.7, 0.3], [-0.8, 0.4, 0.55], [0.7, 0.7, 0.45]]
        )
        np.testing.assert_allclose(cpf(pts), circle_cp(pts), atol=1e-8)

    def test_on_curve_fixed(self):
        surf = cylinder_paraboloid_curve()
        cpf = levelset_composed_cp(surf, (0, 1), TIGHT)
        pts = curve_point(RNG.uniform(0, 2 * np.pi, 20))
        np.testing.assert_allclose(cpf(pts), pts, atol=1e-8)

    def test_idempotence(self):
        surf = cylinder_paraboloid_curve()
        for order in ((0, 1), (1, 0)):
            cpf = levelset_composed_cp(surf, order, TIGHT)
            pts = curve_band_points(50)
            once = cpf(pts)
            twice = cpf(once)
            assert np.abs(twice - once).max() < 1e-8

    def test_residuals_tiny(self):
        surf = cylinder_paraboloid_curve()
        cpf = levelset_composed_cp(surf, (1, 0), TIGHT)
        pts = curve_band_points(50)
        assert surf.band_distance(cpf(pts)).max() < 1e-10

    def test_rescaling_invariance(self):
        surf = cylinder_paraboloid_curve()
        base = levelset_composed_cp(surf, (0, 1), TIGHT)
        pts = curve_band_points(40)
        expected = base(pts)
        for f, name in (
            ((lambda t: 2.0 * t, lambda t: np.full_like(t, 2.0)), "2t"),
            ((lambda t: t**3 + t, lambda t: 3.0 * t**2 + 1.0), "t3+t"),
        ):
            scaled = levelset_composed_cp(surf.rescaled(f, name), (0, 1), TIGHT)
            assert np.abs(scaled(pts) - expected).max() < 1e-8

    def test_two_orders_differ_off_curve(self):
        surf = cylinder_paraboloid_curve()
        cp_a = levelset_composed_cp(surf, (0, 1), TIGHT)
        cp_b = levelset_composed_cp(surf, (1, 0), TIGHT)
        pts = curve_band_points(50)
        assert np.abs(cp_a(pts) - cp_b(pts)).max() > 1e-5


class TestCircleClosedForm:
    def test_paper_values(self):
        np.testing.assert_allclose(
            circle_cp(np.array([2.0, 0.0, 7.0])),
            [np.sqrt(3) / 2, 0.0, 0.5],
            atol=1e-15,
        )
        np.testing.assert_allclose(
            circle_cp(np.array([0.0, -4.0, 0.0])),
            [0.0, -np.sqrt(3) / 2, 0.5],
            atol=1e-15,
        )

    def test_hat_equals_plain(self):
        pts = RNG.normal(size=(50, 3))
        pts = pts[pts[:, 0] ** 2 + pts[:, 1] ** 2 > 1e-3]
        np.testing.assert_array_equal(circle_cp(pts), circle_cp_hat(pts))

    def test_point_on_circle_fixed(self):
        r = np.sqrt(3) / 2
        alpha = RNG.uniform(0, 2 * np.pi, 20)
        pts = np.stack([r * np.cos(alpha), r * np.sin(alpha), np.full(20, 0.5)], -1)
        np.testing.assert_allclose(circle_cp(pts), pts, atol=1e-15)

    def test_on_axis_rejected(self):
        with pytest.raises(OnAxis):
            circle_cp(np.array([0.0, 0.0, 0.3]))

    def test_matches_euclidean_projection(self):
        # nearest point on the circle in Euclidean distance, by construction
        pts = RNG.normal(size=(30, 3)) * 0.3 + np.array([0.5, 0.5, 0.5])
        out = circle_cp(pts)
        r = np.hypot(pts[:, 0], pts[:, 1])
        closest = np.stack(
            [np.sqrt(3) / 2 * pts[:, 0] / r, np.sqrt(3) / 2 * pts[:, 1] / r,
             np.full(len(pts), 0.5)], -1
        )
        np.testing.assert_allclose(out, closest, atol=1e-14)


class TestEuclideanNewton:
    def test_on_curve_fixed(self):
        pts = curve_point(RNG.uniform(0, 2 * np.pi, 30))
        out = euclidean_cp_curve(pts)
        np.testing.assert_allclose(out, pts, atol=1e-9)

    def test_normal_offset_returns_base_point(self):
        theta0 = 1.0
        y = curve_point(theta0)
        vel = curve_velocity(theta0)
        normal = RNG.normal(size=3)
        normal -= vel * np.dot(normal, vel) / np.dot(vel, vel)
        normal /= np.linalg.norm(normal)
        x = y + 0.05 * normal
        out = euclidean_cp_curve(x)
        np.testing.assert_allclose(out, y, atol=1e-8)
        oracle = dense_argmin_on_curve(x, n=200_000)
        np.testing.assert_allclose(out, oracle, atol=1e-7)

    def test_first_order_optimality(self):
        pts = curve_band_points(100)
        out = euclidean_cp_curve(pts)
        theta = geometry.theta_of_point(out)
        resid = np.abs(np.sum((out - pts) * curve_velocity(theta), axis=1))
        assert resid.max() < 1e-10

    def test_against_dense_oracle(self):
        pts = curve_band_points(5)
        for x in pts:
            oracle = dense_argmin_on_curve(x, n=300_000)
            np.testing.assert_allclose(euclidean_cp_curve(x), oracle, atol=1e-7)


class TestCaching:
    def make_grid(self):
        surf = cylinder_paraboloid_curve()
        return surf, band.build_band(surf, dims=50)

    def test_cache_matches_pointwise_calls(self):
        surf, grid = self.make_grid()
        ecp = euclidean_cp_function()
        cache = cache_cp(grid, ecp)
        direct = euclidean_cp_curve(grid.points)
        np.testing.assert_array_equal(cache.points, direct)

    def test_cached_residuals(self):
        surf, grid = self.make_grid()
        cpf = levelset_composed_cp(surf, (0, 1), TIGHT)
        cache = cache_cp(grid, cpf)
        assert cache.max_residual < 1e-10

    def test_empty_grid(self):
        surf, grid = self.make_grid()
        empty = band.BandedGrid(
            box_lo=grid.box_lo,
            box_hi=grid.box_hi,
            h=grid.h,
            dims=grid.dims,
            band_ijk=np.zeros((0, 3), dtype=np.int64),
            band_lin=np.zeros(0, dtype=np.int64),
            band_tol=grid.band_tol,
            surface=surf,
        )
        cache = cache_cp(empty, euclidean_cp_function())
        assert len(cache.points) == 0
        assert cache.max_residual == 0.0

    def test_table_round_trip(self, tmp_path):
        surf, grid = self.make_grid()
        cache = cache_cp(grid, euclidean_cp_function())
        path = tmp_path / "table.cpt"
        save_cp_table(path, cache)
        header, pts = load_cp_table(path)
        assert header["kind"] == "euclidean_newton"
        assert header["count"] == grid.band_size
        assert header["dims"] == [50, 50, 50]
        np.testing.assert_array_equal(pts, cache.points)

    def test_table_csv(self, tmp_path):
        surf, grid = self.make_grid()
        cache = cache_cp(grid, euclidean_cp_function())
        path = tmp_path / "table.csv"
        cp_table_to_csv(path, cache)
        lines = path.read_text().splitlines()
        assert lines[0] == "i,j,k,cp_x,cp_y,cp_z,residual"
        assert len(lines) == grid.band_size + 1
        first = lines[1].split(",")
        np.testing.assert_allclose(
            [float(v) for v in first[3:6]], cache.points[0]
        )
