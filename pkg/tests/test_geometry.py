import numpy as np
import pytest

from cpcalc import geometry
from cpcalc.errors import DegenerateGradient, OffSurface
from cpcalc.geometry import (
    LevelSetFn,
    curve_acceleration,
    curve_point,
    curve_speed,
    curve_velocity,
    cylinder_paraboloid_curve,
    normal_matrix,
    sphere_plane_circle,
    tangent_field,
    tangent_projector,
    theta_of_point,
)

RNG = np.random.default_rng(7)


def random_band_points(n, scale=0.05):
    theta = RNG.uniform(0.0, 2.0 * np.pi, n)
    offsets = RNG.normal(size=(n, 3))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    return curve_point(theta) + scale * RNG.uniform(0.2, 1.0, (n, 1)) * offsets


class TestNormals:
    def test_cylinder_normal_at_top(self):
        surf = cylinder_paraboloid_curve()
        n = normal_matrix(surf, np.array([0.0, 0.0, 1.0]))
        # gradient of 1 - x2^2 - x3^2 is (0, 0, -2) here
        np.testing.assert_allclose(n[:, 0], [0.0, 0.0, -1.0], atol=1e-15)

    def test_sphere_normal_is_radial(self):
        surf = sphere_plane_circle()
        n = normal_matrix(surf, np.array([1.0, 0.0, 0.0]))
        np.testing.assert_allclose(n[:, 0], [1.0, 0.0, 0.0], atol=1e-15)

    def test_paraboloid_normal(self):
        surf = cylinder_paraboloid_curve()
        n = normal_matrix(surf, np.array([1.0, 0.0, 1.0]))
        np.testing.assert_allclose(
            n[:, 1], np.array([-2.0, 0.0, 1.0]) / np.sqrt(5.0), atol=1e-15
        )

    def test_columns_unit(self):
        surf = cylinder_paraboloid_curve()
        pts = random_band_points(50)
        n = normal_matrix(surf, pts)
        np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-14)

    def test_degenerate_gradient(self):
        flat = LevelSetFn(
            func=lambda x: x[..., 0] ** 2,
            grad=lambda x: np.stack(
                [2 * x[..., 0], 0 * x[..., 0], 0 * x[..., 0]], axis=-1
            ),
        )
        surf = geometry.LevelSetSurface((flat,), band_tol=1.0)
        with pytest.raises(DegenerateGradient):
            normal_matrix(surf, np.array([0.0, 0.3, 0.2]))


class TestProjector:
    def test_sphere_projector_axis(self):
        surf = geometry.LevelSetSurface((geometry.sphere_level_set(),), 0.5)
        p = tangent_projector(surf, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(p, np.diag([1.0, 1.0, 0.0]), atol=1e-15)

    def test_sphere_projector_closed_form(self):
        # P = (1/|x|^2) [[x2^2+x3^2, -x1 x2, -x1 x3], ...]
        surf = geometry.LevelSetSurface((geometry.sphere_level_set(),), 0.5)
        pts = random_band_points(20)
        p = tangent_projector(surf, pts)
        for x, mat in zip(pts, p):
            r2 = np.dot(x, x)
            expected = np.eye(3) - np.outer(x, x) / r2
            np.testing.assert_allclose(mat, expected, atol=1e-13)

    def test_projector_invariants(self):
        for surf in (cylinder_paraboloid_curve(), sphere_plane_circle(0.3)):
            pts = curve_point(RNG.uniform(0, 2 * np.pi, 40))
            if surf.codim == 2 and surf.phis[0].name == "sphere":
                pts = pts  # circle points work for both
            p = tangent_projector(surf, pts)
            np.testing.assert_allclose(p, np.swapaxes(p, 1, 2), atol=1e-12)
            np.testing.assert_allclose(
                np.einsum("nij,njk->nik", p, p), p, atol=1e-12
            )
            np.testing.assert_allclose(
                np.trace(p, axis1=1, axis2=2), surf.dim, atol=1e-12
            )

    def test_projector_annihilates_normals(self):
        surf = cylinder_paraboloid_curve()
        pts = curve_point(RNG.uniform(0, 2 * np.pi, 60))
        p = tangent_projector(surf, pts)
        n = normal_matrix(surf, pts)
        np.testing.assert_allclose(
            np.einsum("nij,njk->nik", p, n), 0.0, atol=1e-12
        )


class TestTangentField:
    def test_explicit_value_at_theta0(self):
        surf = cylinder_paraboloid_curve()
        t = tangent_field(surf, np.array([1.0, 0.0, 1.0]))
        # -(0,0,-2) x (-2,0,1) / 4 = (0, -1, 0)
        np.testing.assert_allclose(t, [0.0, -1.0, 0.0], atol=1e-15)

    def test_matches_parametrization_direction(self):
        surf = cylinder_paraboloid_curve()
        theta = np.linspace(0, 2 * np.pi, 100, endpoint=False)
        t = tangent_field(surf, curve_point(theta))
        unit_vel = curve_velocity(theta)
        unit_vel /= np.linalg.norm(unit_vel, axis=1, keepdims=True)
        dots = np.abs(np.sum(t * unit_vel, axis=1))
        np.testing.assert_allclose(dots, 1.0, atol=1e-12)

    def test_orthogonal_to_gradients(self):
        surf = cylinder_paraboloid_curve()
        pts = curve_point(RNG.uniform(0, 2 * np.pi, 100))
        t = tangent_field(surf, pts)
        g = surf.gradients(pts)
        np.testing.assert_allclose(
            np.einsum("nj,nmj->nm", t, g), 0.0, atol=1e-12
        )

    def test_no_sign_flips_along_curve(self):
        surf = cylinder_paraboloid_curve()
        theta = np.linspace(0, 2 * np.pi, 1000, endpoint=False)
        t = tangent_field(surf, curve_point(theta))
        dots = np.sum(t[:-1] * t[1:], axis=1)
        assert np.all(dots > 0.9)


class TestCurveParametrization:
    def test_values(self):
        np.testing.assert_allclose(curve_point(0.0), [1.0, 0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(
            curve_point(np.pi / 2), [0.0, 1.0, 0.0], atol=1e-15
        )

    def test_on_curve_identically(self):
        surf = cylinder_paraboloid_curve()
        theta = RNG.uniform(0, 2 * np.pi, 1000)
        resid = surf.band_distance(curve_point(theta))
        assert resid.max() < 1e-14

    def test_velocity_matches_finite_differences(self):
        theta = RNG.uniform(0, 2 * np.pi, 50)
        d = 1e-6
        fd = (curve_point(theta + d) - curve_point(theta - d)) / (2 * d)
        np.testing.assert_allclose(curve_velocity(theta), fd, atol=1e-8)

    def test_acceleration_matches_finite_differences(self):
        theta = RNG.uniform(0, 2 * np.pi, 50)
        d = 1e-5
        fd = (
            curve_velocity(theta + d) - curve_velocity(theta - d)
        ) / (2 * d)
        np.testing.assert_allclose(curve_acceleration(theta), fd, atol=1e-7)

    def test_speed_positive(self):
        theta = np.linspace(0, 2 * np.pi, 500)
        assert curve_speed(theta).min() > 0.9


class TestThetaOfPoint:
    def test_known_angles(self):
        assert theta_of_point(np.array([1.0, 0.0, 1.0])) == pytest.approx(0.0)
        assert theta_of_point(np.array([0.0, 1.0, 0.0])) == pytest.approx(
            np.pi / 2
        )

    def test_round_trip(self):
        theta = RNG.uniform(0, 2 * np.pi, 1000)
        back = theta_of_point(curve_point(theta))
        gap = np.abs(curve_point(back) - curve_point(theta)).max()
        assert gap < 1e-12

    def test_off_surface_rejected(self):
        with pytest.raises(OffSurface):
            theta_of_point(np.array([1.1, 0.0, 1.0]))


class TestLevelSetFn:
    def test_fd_fallback_matches_analytic(self):
        analytic = geometry.paraboloid_level_set()
        fallback = LevelSetFn(func=analytic.func, grad=None)
        pts = random_band_points(30)
        np.testing.assert_allclose(
            fallback.gradient(pts), analytic.gradient(pts), atol=1e-9
        )

    def test_analytic_gradients_match_fd(self):
        for phi in (
            geometry.sphere_level_set(),
            geometry.plane_level_set(),
            geometry.cylinder_level_set(),
            geometry.paraboloid_level_set(),
        ):
            pts = random_band_points(30)
            h = 1e-5
            fd = np.empty((len(pts), 3))
            for a in range(3):
                e = np.zeros(3)
                e[a] = h
                fd[:, a] = (phi.value(pts + e) - phi.value(pts - e)) / (2 * h)
            np.testing.assert_allclose(phi.gradient(pts), fd, atol=1e-9)

    def test_rescaled_surface_same_zero_set(self):
        surf = cylinder_paraboloid_curve()
        scaled = surf.rescaled((lambda t: t**3 + t, lambda t: 3 * t**2 + 1), "cubic")
        pts = curve_point(RNG.uniform(0, 2 * np.pi, 100))
        assert scaled.band_distance(pts).max() < 1e-13
