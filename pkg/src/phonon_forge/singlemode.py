"""Single cavity mode pumped on the blue motional sideband.

After adiabatic elimination of the ion's internal state the phonon-number
distribution obeys a birth-death rate equation with thermal flows
``kappa n_th`` (up) and ``kappa (n_th + 1)`` (down) plus a saturable pump
``A / (1 + n s)`` with ``A = gamma s / 2``.  Everything here is in units of
omega0.

Sign convention: the gain is ``G = (gamma s / 2) sum_n P_n / (1 + n s)``,
i.e. ``-(gamma s / 2) <sigma_z>`` with the adiabatic ``sigma_z`` being
negative.  This is the sign that puts the threshold at ``G = kappa``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.special import logsumexp
from scipy.stats import poisson

log = logging.getLogger(__name__)

TAIL_TOL = 1e-8


class TruncationError(RuntimeError):
    pass


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DriveParams:
    eta: float
    Omega: float
    gamma: float
    delta_b: float = 0.0

    def __post_init__(self):
        if self.eta * self.Omega < 0:
            raise ValueError("eta * Omega must be non-negative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def eta_omega(self) -> float:
        return self.eta * self.Omega

    @classmethod
    def from_eta_omega(cls, eta_omega: float, gamma: float, delta_b: float = 0.0) -> "DriveParams":
        return cls(1.0, float(eta_omega), float(gamma), float(delta_b))


@dataclass(frozen=True)
class CavityModeParams:
    omega: float
    kappa: float
    n_th: float

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.n_th >= 0:
            raise ValueError("n_th must be non-negative")

    @property
    def kappa_up(self) -> float:
        return self.n_th * self.kappa

    @property
    def kappa_down(self) -> float:
        return (self.n_th + 1) * self.kappa


@dataclass
class NumberDistribution:
    P: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if self.P.ndim != 1 or len(self.P) < 2:
            raise ValueError("distribution needs at least two levels")
        if np.any(self.P < -1e-15):
            raise ValueError("negative probability")
        if abs(self.P.sum() - 1.0) > 1e-9:
            raise ValueError(f"distribution not normalised (sum = {self.P.sum():.12g})")

    @property
    def n_max(self) -> int:
        return len(self.P) - 1

    @property
    def n(self) -> np.ndarray:
        return np.arange(len(self.P), dtype=float)

    @property
    def tail(self) -> float:
        return float(self.P[-1])

    @property
    def truncated(self) -> bool:
        """True when the top level carries too much mass to trust the cut-off."""
        return self.tail >= TAIL_TOL

    @property
    def mean(self) -> float:
        return float(self.n @ self.P)

    @property
    def variance(self) -> float:
        m = self.mean
        return float(((self.n - m) ** 2) @ self.P)

    @classmethod
    def vacuum(cls, n_max: int) -> "NumberDistribution":
        P = np.zeros(n_max + 1)
        P[0] = 1.0
        return cls(P)

    @classmethod
    def thermal(cls, n_th: float, n_max: int) -> "NumberDistribution":
        if n_th == 0:
            return cls.vacuum(n_max)
        x = n_th / (n_th + 1)
        P = (1 - x) * x ** np.arange(n_max + 1)
        return cls(P / P.sum())

    @classmethod
    def poisson(cls, mean: float, n_max: int) -> "NumberDistribution":
        P = poisson.pmf(np.arange(n_max + 1), mean)
        return cls(P / P.sum())


def saturation(drive: DriveParams) -> float:
    return 2 * drive.eta_omega**2 / (drive.delta_b**2 + (drive.gamma / 2) ** 2)


def pump_rate(drive: DriveParams) -> float:
    """Small-signal pump ``A = gamma s / 2``."""
    return 0.5 * drive.gamma * saturation(drive)


def gain(dist: NumberDistribution, drive: DriveParams) -> float:
    s = saturation(drive)
    return float(0.5 * drive.gamma * s * (dist.P / (1 + dist.n * s)).sum())


def rate_matrix(n_max: int, drive: DriveParams, mode: CavityModeParams) -> sp.csc_matrix:
    """Tridiagonal generator on levels 0..n_max with a reflecting top."""
    n = np.arange(n_max + 1, dtype=float)
    s = saturation(drive)
    up = mode.kappa_up * (n + 1) + pump_rate(drive) * (n + 1) / (1 + n * s)
    down = mode.kappa_down * n
    up[-1] = 0.0
    return sp.diags([-(up + down), up[:-1], down[1:]], [0, -1, 1], format="csc")


def rate_rhs(dist, drive: DriveParams, mode: CavityModeParams) -> np.ndarray:
    """dP/dt for the number distribution ``dist`` (array or NumberDistribution)."""
    P = dist.P if isinstance(dist, NumberDistribution) else np.asarray(dist, dtype=float)
    if P[-1] >= TAIL_TOL:
        warnings.warn(f"top level holds {P[-1]:.2e} of the probability; truncation is too tight",
                      TruncationWarning, stacklevel=2)
    n = np.arange(len(P), dtype=float)
    s = saturation(drive)
    flow_up = (mode.kappa_up * (n + 1) + pump_rate(drive) * (n + 1) / (1 + n * s)) * P
    flow_down = mode.kappa_down * n * P
    flow_up[-1] = 0.0
    d = -flow_up - flow_down
    d[1:] += flow_up[:-1]
    d[:-1] += flow_down[1:]
    return d


def mean_n_steady(drive: DriveParams, mode: CavityModeParams) -> float:
    """Mean-field steady state: positive root of
    ``kappa s n^2 - (A - kappa + kappa n_th s) n - (kappa n_th + A) = 0``."""
    s = saturation(drive)
    k, nth = mode.kappa, mode.n_th
    if s == 0:
        return float(nth)
    A = 0.5 * drive.gamma * s
    a = k * s
    b = A - k + k * nth * s
    c = k * nth + A
    disc = math.sqrt(b * b + 4 * a * c)
    # pick the cancellation-free form of the positive root
    return float((b + disc) / (2 * a) if b > 0 else 2 * c / (disc - b))


def default_n_max(drive: DriveParams, mode: CavityModeParams) -> int:
    n_est = mean_n_steady(drive, mode)
    return max(int(math.ceil(n_est + 12 * math.sqrt(n_est + mode.n_th + 1))), 20)


def steady_state(drive: DriveParams, mode: CavityModeParams, n_max: int | None = None,
                 *, auto_extend: bool = True) -> NumberDistribution:
    """Stationary distribution from the detailed-balance product formula."""
    if not mode.kappa > 0:
        raise ValueError("kappa must be positive for a normalisable steady state")
    n_max = default_n_max(drive, mode) if n_max is None else int(n_max)
    s = saturation(drive)
    A = pump_rate(drive)
    while True:
        k = np.arange(1, n_max + 1, dtype=float)
        with np.errstate(divide="ignore"):
            log_ratio = np.log(mode.kappa_up + A / (1 + (k - 1) * s)) - math.log(mode.kappa_down)
        logP = np.concatenate([[0.0], np.cumsum(log_ratio)])
        P = np.exp(logP - logsumexp(logP))
        dist = NumberDistribution(P / P.sum())
        if not dist.truncated or not auto_extend:
            return dist
        n_max *= 2
        log.debug("extending n_max to %d", n_max)


def g2_zero(dist: NumberDistribution) -> float:
    m = dist.mean
    if m <= 0:
        raise ValueError("g2 is undefined for the vacuum")
    n2 = float(dist.n**2 @ dist.P)
    return (n2 - m) / m**2


def linewidth(drive: DriveParams, mode: CavityModeParams, mean_n: float) -> float:
    if not mean_n > 0:
        raise ValueError("mean phonon number must be positive")
    s = saturation(drive)
    return mode.kappa * mode.n_th / mean_n + drive.gamma / (2 * mean_n) * s / (1 + mean_n * s)


def lineshape(mode: CavityModeParams, dnu: float, mean_n: float, nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    return mean_n / ((nu - mode.omega) ** 2 + dnu**2 / 4)


@dataclass
class SteadyStateReport:
    eta_omega: float
    s: float
    mean_n: float
    mean_n_field: float
    g2: float
    gain: float
    gain_over_kappa: float
    linewidth: float
    n_max: int

    def row(self) -> dict:
        return {"eta_omega": self.eta_omega, "s": self.s, "mean_n": self.mean_n, "g2": self.g2,
                "gain_over_kappa": self.gain_over_kappa, "linewidth": self.linewidth,
                "mean_n_field": self.mean_n_field}


def steady_report(drive: DriveParams, mode: CavityModeParams) -> SteadyStateReport:
    dist = steady_state(drive, mode)
    G = gain(dist, drive)
    m = dist.mean
    return SteadyStateReport(drive.eta_omega, saturation(drive), m, mean_n_steady(drive, mode), g2_zero(dist),
                             G, G / mode.kappa, linewidth(drive, mode, m), dist.n_max)


def threshold_scan(eta_omegas, mode: CavityModeParams, gamma: float, delta_b: float = 0.0) -> list[SteadyStateReport]:
    return [steady_report(DriveParams.from_eta_omega(x, gamma, delta_b), mode) for x in eta_omegas]


def threshold_small_signal(mode: CavityModeParams, gamma: float, delta_b: float = 0.0) -> float:
    """eta*Omega at which the vacuum gain ``gamma s / 2`` equals kappa."""
    return math.sqrt(mode.kappa * (delta_b**2 + gamma**2 / 4) / gamma)


def threshold_crossover(mode: CavityModeParams, gamma: float, delta_b: float = 0.0, factor: float = 10.0) -> float:
    """eta*Omega at which the steady mean phonon number reaches ``factor * n_th``
    (``factor`` phonons when n_th = 0)."""
    target = factor * max(mode.n_th, 1.0)
    x0 = threshold_small_signal(mode, gamma, delta_b)

    def f(x):
        return steady_state(DriveParams.from_eta_omega(x, gamma, delta_b), mode).mean - target

    hi = x0
    while f(hi) < 0:
        hi *= 1.5
    return brentq(f, 0.0, hi, xtol=1e-6)


@dataclass
class DistributionTrajectory:
    t: np.ndarray
    P: np.ndarray          # (n_times, n_max + 1)
    target_mean: float

    @property
    def mean(self) -> np.ndarray:
        return self.P @ np.arange(self.P.shape[1])

    @property
    def norm(self) -> np.ndarray:
        return self.P.sum(axis=1)

    def at(self, i: int) -> NumberDistribution:
        P = np.clip(self.P[i], 0.0, None)
        return NumberDistribution(P / P.sum())

    def time_to_fraction(self, frac: float = 0.9) -> float | None:
        """First time the mean reaches ``frac`` of the steady value (linear
        interpolation between samples), or None if never reached."""
        m = self.mean
        goal = frac * self.target_mean
        hit = np.flatnonzero(m >= goal)
        if not len(hit):
            return None
        i = hit[0]
        if i == 0:
            return float(self.t[0])
        return float(np.interp(goal, m[i - 1:i + 1], self.t[i - 1:i + 1]))


def stability_dt(drive: DriveParams, mode: CavityModeParams) -> float:
    """Step bound for explicit schemes quoted in terms of the bare rates."""
    return 0.1 / (mode.kappa_down + pump_rate(drive))


def evolve_distribution(dist0: NumberDistribution, drive: DriveParams, mode: CavityModeParams, t_max: float,
                        dt: float | None = None, *, method: str = "implicit", n_max: int | None = None,
                        rtol: float = 1e-8) -> DistributionTrajectory:
    """Integrate the rate equation from ``dist0`` and sample every ``dt``.

    ``method="implicit"`` (default) uses BDF with the exact sparse Jacobian.
    The generator's stiffness grows with ``n`` (rates ~ kappa n), so explicit
    stepping needs steps far below the bare-rate bound once thousands of
    levels are occupied.  ``method="explicit"`` runs classical RK4 with the
    step taken from the Gershgorin bound of the generator, for checks.
    """
    target = steady_state(drive, mode)
    n_max = max(target.n_max, dist0.n_max) if n_max is None else n_max
    P0 = np.zeros(n_max + 1)
    P0[: min(len(dist0.P), n_max + 1)] = dist0.P[: n_max + 1]
    P0 /= P0.sum()
    dt = stability_dt(drive, mode) if dt is None else float(dt)
    n_samp = int(math.ceil(t_max / dt)) + 1
    t_eval = np.linspace(0.0, t_max, n_samp)
    M = rate_matrix(n_max, drive, mode)
    if method == "implicit":
        sol = solve_ivp(lambda t, P: M @ P, (0.0, t_max), P0, method="BDF", jac=M, t_eval=t_eval,
                        rtol=rtol, atol=1e-14)
        if not sol.success:
            raise RuntimeError(f"rate-equation integration failed: {sol.message}")
        Ps = sol.y.T
    elif method == "explicit":
        # Gershgorin puts the spectrum within 2 max|diag| of the origin;
        # RK4 is stable on the negative axis up to |h lambda| ~ 2.78
        h_max = 1.2 / abs(M.diagonal()).max()
        Ps = np.empty((n_samp, n_max + 1))
        Ps[0] = P = P0
        for i in range(1, n_samp):
            span = t_eval[i] - t_eval[i - 1]
            m = int(math.ceil(span / h_max))
            h = span / m
            for _ in range(m):
                k1 = M @ P
                k2 = M @ (P + 0.5 * h * k1)
                k3 = M @ (P + 0.5 * h * k2)
                k4 = M @ (P + h * k3)
                P = P + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            Ps[i] = P
    else:
        raise ValueError(f"unknown method {method!r}")
    breach = np.flatnonzero(Ps[:, -1] > TAIL_TOL)
    if len(breach):
        raise TruncationError(f"probability {Ps[breach[0], -1]:.2e} reached n_max={n_max} at t={t_eval[breach[0]]:.4g}; "
                              f"raise n_max")
    return DistributionTrajectory(t_eval, Ps, target.mean)
