import numpy as np
import pytest
from scipy.integrate import solve_ivp

from cpcalc.errors import StepLimitExceeded
from cpcalc.ode import OdeSolveConfig, integrate_ensemble


def test_config_validation():
    with pytest.raises(ValueError):
        OdeSolveConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        OdeSolveConfig(max_steps=0)


def test_linear_decay_closed_form():
    # dy/ds = -2 * span * y  ->  y(1) = y0 exp(-2 span)
    y0 = np.array([[1.0, 2.0, -0.5], [0.3, 0.0, 4.0]])
    spans = np.array([0.7, -0.4])
    out = integrate_ensemble(lambda y: -2.0 * y, y0, spans)
    expected = y0 * np.exp(-2.0 * spans)[:, None]
    np.testing.assert_allclose(out, expected, rtol=1e-10)


def test_zero_span_members_fixed():
    y0 = np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    out = integrate_ensemble(lambda y: y**2 + 1.0, y0, np.array([0.5, 0.0]))
    np.testing.assert_array_equal(out[1], y0[1])
    assert not np.allclose(out[0], y0[0])


def test_matches_scipy_on_nonlinear_system():
    def rhs(y):
        out = np.empty_like(y)
        out[:, 0] = np.sin(y[:, 1])
        out[:, 1] = y[:, 0] * y[:, 2]
        out[:, 2] = -0.5 * y[:, 2] + np.cos(y[:, 0])
        return out

    y0 = np.array([[0.3, -0.2, 1.1]])
    span = 2.0
    mine = integrate_ensemble(
        rhs, y0, np.array([span]), OdeSolveConfig(rel_tol=1e-12, abs_tol=1e-12)
    )
    ref = solve_ivp(
        lambda _, y: rhs(y[None, :])[0],
        (0.0, span),
        y0[0],
        rtol=1e-12,
        atol=1e-13,
    )
    np.testing.assert_allclose(mine[0], ref.y[:, -1], atol=1e-9)


def test_ensemble_matches_single_member_runs():
    def rhs(y):
        return np.stack([-y[:, 1], y[:, 0], 0.1 * y[:, 2]], axis=-1)

    rng = np.random.default_rng(3)
    y0 = rng.normal(size=(20, 3))
    spans = rng.uniform(-1.0, 1.0, 20)
    batched = integrate_ensemble(rhs, y0, spans)
    cfg = OdeSolveConfig()
    singles = np.stack(
        [integrate_ensemble(rhs, y0[i : i + 1], spans[i : i + 1], cfg)[0]
         for i in range(20)]
    )
    # a shared step sequence is at least as accurate as each member's own
    np.testing.assert_allclose(batched, singles, atol=1e-9)


def test_tolerance_controls_error():
    y0 = np.array([[1.0, 0.0, 0.0]])
    spans = np.array([3.0])

    def rhs(y):
        return np.stack([y[:, 1], -y[:, 0], 0.0 * y[:, 2]], axis=-1)

    exact = np.array([np.cos(3.0), -np.sin(3.0), 0.0])
    loose = integrate_ensemble(rhs, y0, spans, OdeSolveConfig(1e-5, 1e-7))
    tight = integrate_ensemble(rhs, y0, spans, OdeSolveConfig(1e-12, 1e-14))
    assert np.abs(tight[0] - exact).max() < np.abs(loose[0] - exact).max()
    assert np.abs(tight[0] - exact).max() < 1e-11


def test_step_limit():
    with pytest.raises(StepLimitExceeded):
        integrate_ensemble(
            lambda y: np.full_like(y, 1.0),
            np.zeros((1, 3)),
            np.array([1.0]),
            OdeSolveConfig(1e-13, 1e-15, max_steps=3),
        )
