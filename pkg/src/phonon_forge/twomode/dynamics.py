"""Two cavity modes (COM and BR) sharing one blue-sideband-driven ion.

Each mode carries its 14 ordered moments up to fourth order.  The ion is
treated in mean field: ``<sigma P^n X^m>`` factorises into
``<sigma><P^n X^m>`` and moments of different modes never mix directly,
so the modes talk to each other only through ``<sigma^->`` and
``<sigma_z>``.  Equations are integrated in the laboratory frame so that
the oscillation frequencies of ``<X_q>`` stay observable.

The ion-mode coupling of mode q is ``g_q = c * eta_q * Omega`` with
``c = coupling_factor`` (default 1).  With c = 1 the onset of each mode
coincides with the single-mode small-signal threshold; c = 1/sqrt(2)
raises both thresholds by sqrt(2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .moments import N_MOM, mean_n, mean_n2, thermal_coherent_block

LASING_FACTOR = 10.0


class ClosureBreakdownError(RuntimeError):
    pass


class NoOscillationError(ValueError):
    pass


@dataclass(frozen=True)
class TwoModeParams:
    omega: tuple = (1.6, 2.5)
    kappa: tuple = (0.05, 0.01)
    n_th: tuple = (13.0, 8.2)
    eta: tuple = (1.0, math.sqrt(1.6 / 2.5))
    Omega: float = 0.0
    delta: float = 2.5
    gamma: float = 43.2
    driven_ion: int = 0
    coupling_factor: float = 1.0
    names: tuple = ("COM", "BR")
    active: tuple = (True, True)

    def __post_init__(self):
        for name in ("omega", "kappa", "n_th", "eta"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2:
                raise ValueError(f"{name} needs one value per mode")
            object.__setattr__(self, name, v)
        if min(self.omega) <= 0 or min(self.kappa) <= 0 or self.gamma <= 0:
            raise ValueError("frequencies and rates must be positive")
        if min(self.n_th) < 0:
            raise ValueError("n_th must be non-negative")
        if self.driven_ion not in (0, 1):
            raise ValueError("driven_ion must be 0 or 1")

    @classmethod
    def from_single_eta(cls, eta: float, **kw) -> "TwoModeParams":
        """Set eta_COM = eta and eta_BR = eta sqrt(omega_COM / omega_BR)."""
        w = kw.get("omega", cls.omega)
        return cls(eta=(eta, eta * math.sqrt(w[0] / w[1])), **kw)

    @property
    def eta_omega(self) -> float:
        """Drive strength quoted as eta_COM * Omega."""
        return self.eta[0] * self.Omega

    def with_eta_omega(self, eta_omega: float) -> "TwoModeParams":
        return replace(self, Omega=eta_omega / self.eta[0])

    def couplings(self) -> np.ndarray:
        # the BR mode vector flips sign between the two ions
        sign = np.array([1.0, -1.0 if self.driven_ion == 1 else 1.0])
        return self.coupling_factor * np.asarray(self.eta) * self.Omega * sign * np.asarray(self.active, float)

    def only(self, q: int) -> "TwoModeParams":
        """Copy with the other mode's coupling zeroed."""
        return replace(self, active=(q == 0, q == 1))

    def detuning(self, q: int) -> float:
        """Laser detuning from mode q's blue sideband."""
        return self.delta - self.omega[q]

    def arrays(self):
        return (np.asarray(self.omega), np.asarray(self.kappa), np.asarray(self.n_th), self.couplings(),
                float(self.delta), float(self.gamma))

    def to_dict(self) -> dict:
        return {"omega": list(self.omega), "kappa": list(self.kappa), "n_th": list(self.n_th), "eta": list(self.eta),
                "Omega": self.Omega, "delta": self.delta, "gamma": self.gamma, "driven_ion": self.driven_ion,
                "coupling_factor": self.coupling_factor}


@dataclass
class MomentState:
    y: np.ndarray
    t: float = 0.0

    def block(self, q: int) -> np.ndarray:
        return self.y[q * N_MOM:(q + 1) * N_MOM]

    @property
    def sigma_minus(self) -> complex:
        return complex(self.y[2 * N_MOM])

    @property
    def sigma_z(self) -> float:
        return float(self.y[2 * N_MOM + 1].real)

    def mean_n(self, q: int) -> float:
        return mean_n(self.block(q))

    def energy(self, q: int) -> float:
        b = self.block(q)
        return float((b[K.IDX[0, 1]].real ** 2 + b[K.IDX[1, 0]].real ** 2) / 2)


def init_state(E_com0: float, E_br0: float, params: TwoModeParams) -> MomentState:
    y = np.zeros(2 * N_MOM + 2, dtype=complex)
    for q, E in enumerate((E_com0, E_br0)):
        y[q * N_MOM:(q + 1) * N_MOM] = thermal_coherent_block(E, params.n_th[q])
    y[2 * N_MOM + 1] = -1.0
    return MomentState(y)


def moment_rhs(state: MomentState, params: TwoModeParams) -> np.ndarray:
    out = np.empty_like(state.y)
    w, k, nth, g, delta, gam = params.arrays()
    K.rhs(state.y, w, k, nth, g, delta, gam, K.IDX, K.PN, K.PM, out)
    return out


def phonon_stats(state: MomentState) -> list[tuple[float, float, float]]:
    """(<n_q>, <n_q^2>, g2_q) for both modes; g2 is nan when <n_q> <= 0."""
    out = []
    for q in range(2):
        b = state.block(q)
        n1, n2 = mean_n(b), mean_n2(b)
        out.append((n1, n2, (n2 - n1) / n1**2 if n1 > 0 else float("nan")))
    return out


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    X: np.ndarray           # (2, n_t) mean quadratures
    P: np.ndarray
    X2: np.ndarray
    P2: np.ndarray
    sigma_z: np.ndarray
    sigma_minus_abs: np.ndarray
    final: MomentState
    params: TwoModeParams
    E0: tuple
    nfev: int
    settle_window: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def energy(self) -> np.ndarray:
        return (self.X**2 + self.P**2) / 2

    @property
    def mean_n(self) -> np.ndarray:
        return (self.X2 + self.P2) / 4 - 0.5

    def _tail(self) -> np.ndarray:
        return self.t >= self.t[-1] - self.settle_window

    @property
    def n_final(self) -> np.ndarray:
        """Mean phonon numbers averaged over the settling window."""
        return self.mean_n[:, self._tail()].mean(axis=1)

    @property
    def converged(self) -> bool:
        """Drift of <n> across the settling window below 1% (or 0.5 phonon)."""
        n = self.mean_n[:, self._tail()]
        drift = np.abs(n[:, -1] - n[:, 0])
        return bool(np.all(drift <= np.maximum(0.01 * n[:, -1], 0.5)))

    @property
    def lasing(self) -> np.ndarray:
        return self.n_final > LASING_FACTOR * np.maximum(np.asarray(self.params.n_th), 1.0)

    @property
    def classification(self) -> str:
        las = self.lasing
        names = self.params.names
        if las.all():
            return "coexisting"
        if las[0]:
            return f"{names[0]}-lasing"
        if las[1]:
            return f"{names[1]}-lasing"
        return "below-threshold"

    def g2(self) -> list[float]:
        return [s[2] for s in phonon_stats(self.final)]

    def frequencies(self, window: float | None = None) -> list[float]:
        """Dominant angular frequency of <X_q> over the last ``window`` time units."""
        dt = self.t[1] - self.t[0]
        window = self.settle_window if window is None else window
        sel = self.t >= self.t[-1] - window
        out = []
        for q in range(2):
            try:
                out.append(dominant_frequency(self.X[q, sel], dt))
            except NoOscillationError:
                out.append(float("nan"))
        return out


def default_t_max(params: TwoModeParams) -> float:
    return 50.0 / min(params.kappa)


def integrate(state0: MomentState, params: TwoModeParams, t_max: float | None = None, rtol: float = 1e-8,
              atol: float = 1e-10, dt_sample: float = 0.25, settle_window: float | None = None,
              phys_tol: float = 1e-6) -> TrajectoryRecord:
    t_max = default_t_max(params) if t_max is None else float(t_max)
    w, k, nth, g, delta, gam = params.arrays()
    y, rec, nfev, status, t_stop = K.integrate(state0.y, w, k, nth, g, delta, gam, K.IDX, K.PN, K.PM,
                                               t_max, dt_sample, rtol, atol, phys_tol)
    if status != K.OK:
        reason = {K.UNPHYSICAL: "negative quadrature variance or atom outside the Bloch ball",
                  K.STEP_UNDERFLOW: "step size underflow",
                  K.NON_FINITE: "non-finite error estimate"}[status]
        raise ClosureBreakdownError(f"moment closure broke down at t={t_stop:.4g}: {reason}")
    t = np.arange(rec.shape[0]) * dt_sample
    E0 = tuple(MomentState(state0.y).energy(q) for q in range(2))
    window = min(250.0, 0.1 * t_max) if settle_window is None else settle_window
    return TrajectoryRecord(t, rec[:, [0, 4]].T, rec[:, [1, 5]].T, rec[:, [2, 6]].T, rec[:, [3, 7]].T,
                            rec[:, 8], rec[:, 9], MomentState(y, t_max), params, E0, int(nfev), window)


def run(E_com0: float, E_br0: float, params: TwoModeParams, **kw) -> TrajectoryRecord:
    return integrate(init_state(E_com0, E_br0, params), params, **kw)


def dominant_frequency(x: np.ndarray, dt: float, floor: float = 10.0) -> float:
    """Angular frequency of the strongest spectral line of ``x``.

    Hann window, real FFT, then a parabola through the log magnitudes of the
    peak bin and its neighbours.  Raises NoOscillationError when the peak
    is less than ``floor`` times the median magnitude.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < 16:
        raise NoOscillationError("too few samples")
    spec = np.abs(np.fft.rfft((x - x.mean()) * np.hanning(len(x))))
    freqs = 2 * np.pi * np.fft.rfftfreq(len(x), dt)
    spec[0] = 0.0
    i = int(np.argmax(spec))
    if spec[i] <= floor * np.median(spec[1:]) or spec[i] == 0:
        raise NoOscillationError("no spectral peak above the noise floor")
    if 0 < i < len(spec) - 1 and spec[i - 1] > 0 and spec[i + 1] > 0:
        a, b, c = np.log(spec[i - 1:i + 2])
        shift = 0.5 * (a - c) / (a - 2 * b + c)
    else:
        shift = 0.0
    return float(freqs[i] + shift * (freqs[1] - freqs[0]))


def spectrum(x: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed amplitude spectrum (angular frequency, magnitude)."""
    x = np.asarray(x, dtype=float)
    win = np.hanning(len(x))
    amp = np.abs(np.fft.rfft((x - x.mean()) * win)) * 2 / win.sum()
    return 2 * np.pi * np.fft.rfftfreq(len(x), dt), amp
