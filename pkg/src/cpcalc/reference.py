"""High-accuracy reference solutions on the cylinder/paraboloid curve.

Everything is phrased through the parametrization ``gamma(theta)``:

* the arc-length function ``s(theta)`` and its Newton inverse;
* the transport solution ``cos^2(s^{-1}(t + s(theta)))`` for the constant
  unit-speed advection problem;
* a Fourier heat series in the arc-length variable for the diffusion
  problem, with the truncation order chosen so the discarded tail is below
  machine accuracy at the earliest evaluation time.

The speed ``|gamma'|`` is analytic and periodic, so its trigonometric
interpolant converges geometrically; integrating that series term by term
gives a spectrally accurate, vectorized arc-length function (the same
accuracy class as adaptive quadrature per evaluation, at array speed).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import NoConvergence, QuadratureNoConvergence
from .geometry import curve_speed

__all__ = [
    "ArcLength",
    "arc_length",
    "arc_length_from",
    "total_arc_length",
    "s_inverse",
    "advection_exact",
    "HeatSeries",
    "heat_exact",
    "initial_heat_profile",
    "reference_to_csv",
]

_TWO_PI = 2.0 * np.pi


def initial_heat_profile(theta) -> np.ndarray:
    """u0(gamma(theta)) = exp(4 cos^2 theta) / 50."""
    return np.exp(4.0 * np.cos(theta) ** 2) / 50.0


class ArcLength:
    """s(theta) = integral of |gamma'| from 0 to theta, built spectrally."""

    def __init__(self, n_samples: int = 4096, tail_tol: float = 1e-13):
        theta = _TWO_PI * np.arange(n_samples) / n_samples
        speed = curve_speed(theta)
        coef = np.fft.rfft(speed) / n_samples
        self.mean = coef[0].real
        tail = np.max(np.abs(coef[-max(4, n_samples // 64):]))
        if tail > tail_tol * abs(self.mean):
            raise QuadratureNoConvergence(
                f"speed spectrum tail {tail:.3e} has not decayed below "
                f"{tail_tol:.1e} relative at {n_samples} samples"
            )
        # keep modes above the FFT rounding floor; the analytic speed decays
        # geometrically, so this retains a few dozen modes
        floor = 32.0 * np.finfo(float).eps * np.sqrt(n_samples) * abs(self.mean)
        keep = np.where(np.abs(coef[1:]) > floor)[0] + 1
        kmax = int(keep.max()) if len(keep) else 0
        self.k = np.arange(1, kmax + 1)
        # real series: speed = mean + sum_k (a_k cos + b_k sin)
        self.a = 2.0 * coef[1 : kmax + 1].real
        self.b = -2.0 * coef[1 : kmax + 1].imag
        self.total = self.mean * _TWO_PI

    def __call__(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        shape = th.shape
        th = th.ravel()[:, None]
        kt = th * self.k[None, :]
        out = self.mean * th[:, 0] + np.sin(kt) @ (self.a / self.k) + (
            1.0 - np.cos(kt)
        ) @ (self.b / self.k)
        return out.reshape(shape) if shape else float(out[0])

    def speed(self, theta) -> np.ndarray:
        return curve_speed(theta)

    def inverse(self, length, tol: float = 1e-13, max_iter: int = 100) -> np.ndarray:
        """theta with s(theta) = length (mod total); safeguarded Newton.

        The speed is bounded away from zero, so Newton from the proportional
        initial guess converges fast; a bisection bracket guards stray steps.
        """
        arr = np.asarray(length, dtype=float)
        shape = arr.shape
        wraps = np.floor(arr.ravel() / self.total)
        target = arr.ravel() - wraps * self.total
        theta = _TWO_PI * target / self.total
        lo = np.zeros_like(theta)
        hi = np.full_like(theta, _TWO_PI)
        resid = self(theta) - target
        for _ in range(max_iter):
            done = np.abs(resid) <= tol * max(1.0, self.total)
            if np.all(done):
                break
            lo = np.where(resid < 0.0, np.maximum(lo, theta), lo)
            hi = np.where(resid > 0.0, np.minimum(hi, theta), hi)
            cand = theta - resid / self.speed(theta)
            bad = (cand <= lo) | (cand >= hi)
            cand = np.where(bad, 0.5 * (lo + hi), cand)
            theta = np.where(done, theta, cand)
            resid = self(theta) - target
        else:
            raise NoConvergence("arc-length inversion did not reach tolerance")
        theta = theta + wraps * _TWO_PI
        return theta.reshape(shape) if shape else float(theta[0])


@lru_cache(maxsize=1)
def _arc() -> ArcLength:
    return ArcLength()


def arc_length(theta):
    """s(theta) for theta in [0, 2*pi] (vectorized)."""
    return _arc()(theta)


def arc_length_from(theta_lo, theta_hi):
    """Arc length of the piece between two angles."""
    return _arc()(theta_hi) - _arc()(theta_lo)


def total_arc_length() -> float:
    return _arc().total


def s_inverse(length):
    """Inverse arc-length map; the input is taken modulo the total length."""
    return np.mod(_arc().inverse(length), _TWO_PI)


def advection_exact(t, theta) -> np.ndarray:
    """Transport solution: the initial profile cos^2 shifted by t in arc length."""
    arc = _arc()
    th = np.asarray(theta, dtype=float)
    shifted = arc.inverse(np.asarray(t, dtype=float) + arc(th))
    return np.cos(shifted) ** 2


class HeatSeries:
    """Fourier-in-arc-length solution of the curve diffusion problem.

    Coefficients come from the periodic trapezoid rule, which is spectrally
    accurate for the smooth periodic integrand.  ``t_min`` is the earliest
    time the series will be evaluated at; the mode count is the smallest M
    with ``exp(-omega^2 M^2 t_min) |c_0|`` below machine accuracy.
    """

    def __init__(self, t_min: float = 0.01, n_quad: int = 2**14, m_cap: int = 4000):
        if t_min <= 0.0:
            raise ValueError("t_min must be positive")
        arc = _arc()
        self.t_min = float(t_min)
        self.omega = _TWO_PI / arc.total
        theta = _TWO_PI * np.arange(n_quad) / n_quad
        s_vals = arc(theta)
        weight = curve_speed(theta) * (_TWO_PI / n_quad) / arc.total
        u0 = initial_heat_profile(theta)
        c0 = float(np.sum(u0 * weight))
        m = int(
            np.ceil(np.sqrt(max(np.log(abs(c0) / 2.0**-52), 1.0)) / (self.omega * np.sqrt(t_min)))
        )
        if m > m_cap:
            raise QuadratureNoConvergence(
                f"series needs {m} modes at t_min={t_min}; cap is {m_cap}"
            )
        self.m = np.arange(m + 1)
        phase = np.exp(-1j * self.omega * np.outer(self.m, s_vals))
        self.coef = phase @ (u0 * weight)  # c_m for m >= 0; c_-m = conj(c_m)
        self.c0 = c0

    def __call__(self, t, theta) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < self.t_min):
            raise ValueError(
                f"series truncated for t >= {self.t_min}; got t = {t_arr.min()}"
            )
        th = np.asarray(theta, dtype=float)
        shape = np.broadcast_shapes(t_arr.shape, th.shape)
        s_vals = _arc()(th)
        decay = np.exp(
            -((self.omega * self.m) ** 2) * np.broadcast_to(t_arr, shape)[..., None]
        )
        angles = self.omega * np.multiply.outer(np.broadcast_to(s_vals, shape), self.m)
        real = np.cos(angles) * self.coef.real - np.sin(angles) * self.coef.imag
        real[..., 1:] *= 2.0
        out = np.sum(decay * real, axis=-1)
        return out.reshape(shape) if shape else float(out)


@lru_cache(maxsize=4)
def _heat_series(t_min: float) -> HeatSeries:
    return HeatSeries(t_min=t_min)


def heat_exact(t, theta, t_min: float = 0.01) -> np.ndarray:
    """Diffusion solution at time ``t``; series cached per ``t_min``."""
    t_arr = np.asarray(t, dtype=float)
    eff = min(t_min, float(t_arr.min()))
    if eff <= 0.0:
        raise ValueError("heat_exact needs t > 0")
    return _heat_series(eff)(t, theta)


def reference_to_csv(path, times, thetas, problem: str = "heat") -> None:
    """Tabulate a reference solution on a (time x angle) grid."""
    times = np.asarray(times, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    fn = heat_exact if problem == "heat" else advection_exact
    with open(path, "w") as fh:
        fh.write("t,theta,value\n")
        for t in times:
            vals = fn(t, thetas)
            for th, v in zip(thetas, np.atleast_1d(vals)):
                fh.write(f"{t!r},{th!r},{v!r}\n")
