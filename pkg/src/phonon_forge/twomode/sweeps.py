"""Parameter sweeps over the two-mode model: phase diagrams and thresholds."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .. import singlemode as sm
from .dynamics import MomentState, TwoModeParams, init_state, moment_rhs, run

log = logging.getLogger(__name__)


@dataclass
class PhaseDiagram:
    eta_omega: np.ndarray
    E_com0: np.ndarray
    E_br0: float
    n_com: np.ndarray        # (len(eta_omega), len(E_com0))
    n_br: np.ndarray
    classification: np.ndarray
    converged: np.ndarray
    errors: dict

    def rows(self):
        for i, x in enumerate(self.eta_omega):
            for j, e in enumerate(self.E_com0):
                yield {"eta_omega": float(x), "E_COM0": float(e), "n_COM_s": float(self.n_com[i, j]),
                       "n_BR_s": float(self.n_br[i, j]), "class": str(self.classification[i, j]),
                       "converged": bool(self.converged[i, j])}


def _cell(args):
    params, x, e_com, e_br, kw = args
    try:
        rec = run(e_com, e_br, params.with_eta_omega(x), **kw)
        n = rec.n_final
        return float(n[0]), float(n[1]), rec.classification, rec.converged, None
    except Exception as exc:  # a failed cell must not stop the sweep
        return float("nan"), float("nan"), "failed", False, f"{type(exc).__name__}: {exc}"


def phase_diagram(params: TwoModeParams, eta_omegas, E_com0s, E_br0: float = 0.5, *, jobs: int = 1,
                  **integrate_kw) -> PhaseDiagram:
    eta_omegas = np.atleast_1d(np.asarray(eta_omegas, dtype=float))
    E_com0s = np.atleast_1d(np.asarray(E_com0s, dtype=float))
    if not len(eta_omegas) or not len(E_com0s):
        raise ValueError("phase-diagram grids must be non-empty")
    tasks = [(params, x, e, E_br0, integrate_kw) for x in eta_omegas for e in E_com0s]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_cell, tasks))
    else:
        results = [_cell(t) for t in tasks]
    shape = (len(eta_omegas), len(E_com0s))
    n_com = np.array([r[0] for r in results]).reshape(shape)
    n_br = np.array([r[1] for r in results]).reshape(shape)
    cls = np.array([r[2] for r in results], dtype=object).reshape(shape)
    conv = np.array([r[3] for r in results]).reshape(shape)
    errors = {}
    for idx, r in enumerate(results):
        if r[4] is not None:
            i, j = divmod(idx, len(E_com0s))
            errors[(i, j)] = r[4]
            log.warning("cell eta_omega=%g E_COM0=%g failed: %s", eta_omegas[i], E_com0s[j], r[4])
    return PhaseDiagram(eta_omegas, E_com0s, E_br0, n_com, n_br, cls, conv, errors)


def _real_jacobian(params: TwoModeParams, state: MomentState, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the moment flow on (Re, Im) pairs."""
    y0 = state.y
    n = len(y0)
    J = np.empty((2 * n, 2 * n))
    for j in range(2 * n):
        dy = np.zeros(n, dtype=complex)
        dy[j % n] = h if j < n else 1j * h
        fp = moment_rhs(MomentState(y0 + dy), params)
        fm = moment_rhs(MomentState(y0 - dy), params)
        d = (fp - fm) / (2 * h)
        J[:, j] = np.concatenate([d.real, d.imag])
    return J


def growth_rate(params: TwoModeParams) -> float:
    """Largest real part of the linearised flow at the non-lasing fixed point
    (thermal modes, ion in the ground state)."""
    state = init_state(0.0, 0.0, params)
    return float(np.linalg.eigvals(_real_jacobian(params, state)).real.max())


def moment_onset(params: TwoModeParams, q: int, lo: float = 1e-3, hi: float = 5.0) -> float:
    """eta*Omega at which mode q alone turns unstable in the moment equations."""
    base = params.only(q)

    def f(x):
        return growth_rate(base.with_eta_omega(x))

    if f(lo) >= 0:
        raise ValueError("already unstable at the lower bracket")
    while f(hi) < 0:
        hi *= 2
        if hi > 1e3:
            raise ValueError("no instability found")
    return float(brentq(f, lo, hi, xtol=1e-6))


def single_mode_threshold(params: TwoModeParams, q: int) -> float:
    """Small-signal threshold of mode q, quoted as eta_COM * Omega."""
    mode = sm.CavityModeParams(params.omega[q], params.kappa[q], params.n_th[q])
    x = sm.threshold_small_signal(mode, params.gamma, params.detuning(q))
    return x / (params.coupling_factor * params.eta[q]) * params.eta[0]


@dataclass
class ConsistencyReport:
    mode: str
    single_mode: float
    moment_equations: float

    @property
    def relative_difference(self) -> float:
        return abs(self.moment_equations - self.single_mode) / self.single_mode


def single_mode_consistency(params: TwoModeParams, q: int) -> ConsistencyReport:
    return ConsistencyReport(params.names[q], single_mode_threshold(params, q), moment_onset(params, q))
