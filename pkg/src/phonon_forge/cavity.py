"""Cavity/bath partition of a tweezered crystal and cavity-mode decay rates.

The crystal is split into a contiguous cavity block ``C`` (left wall, inner
ions, right wall) and the remaining bath ``B``.  Each block is diagonalised
on its own; the off-diagonal block ``A_CB`` couples cavity mode ``q`` to bath
mode ``k`` with strength (units of omega0)::

    g_qk = (U_C^T A_CB U_B)_qk / (2 sqrt(nu_q nu_k))

which follows from ``V_CB = m omega0^2 z_C^T A_CB z_B`` and the usual
zero-point lengths.  The golden-rule rate is ``kappa_q = 2 pi <g^2> rho_B``,
with the average and the density of states taken over one shared triangular
window around ``omega_q``.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crystal import IonArraySpec

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MAGIC = b"PHFDECMP"


class PartitionError(ValueError):
    pass


class WallsIndistinctError(ValueError):
    pass


class DecayRateError(ValueError):
    pass


class NonMarkovianWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Partition:
    cavity_sites: tuple
    bath_sites: tuple
    n_s: int
    w_l: int
    w_r: int

    @property
    def n_c(self) -> int:
        return len(self.cavity_sites)

    @property
    def n_b(self) -> int:
        return len(self.bath_sites)

    @property
    def wall_sites(self) -> list[int]:
        c = self.cavity_sites
        return list(c[: self.w_l]) + list(c[len(c) - self.w_r:])

    def to_dict(self) -> dict:
        return {"cavity_start": self.cavity_sites[0], "n_s": self.n_s, "w_l": self.w_l,
                "w_r": self.w_r, "n_ions": self.n_c + self.n_b}


def partition(spec: IonArraySpec, cavity_center: int, n_s: int, w_l: int, w_r: int | None = None) -> Partition:
    """Carve a cavity of ``n_s`` ions plus walls out of ``spec``.

    The block of ``n_c = n_s + w_l + w_r`` sites starts at
    ``cavity_center - n_c // 2``.  The tweezers in ``spec`` must sit exactly on
    the wall sites.
    """
    w_r = w_l if w_r is None else w_r
    if n_s < 1 or w_l < 0 or w_r < 0:
        raise PartitionError("need n_s >= 1 and non-negative wall thicknesses")
    n_c = n_s + w_l + w_r
    start = cavity_center - n_c // 2
    if start < 0 or start + n_c > spec.n_ions:
        raise PartitionError(f"cavity block [{start}, {start + n_c}) does not fit in {spec.n_ions} ions")
    n_b = spec.n_ions - n_c
    if n_b < 10 * n_c:
        raise PartitionError(f"bath too small: {n_b} bath ions for {n_c} cavity-part ions (need >= {10 * n_c})")
    if n_b < 100 * n_c:
        warnings.warn(f"bath of {n_b} ions is below 100 x n_c; the continuum limit is marginal", stacklevel=2)
    cav = tuple(range(start, start + n_c))
    walls = sorted(cav[:w_l] + cav[n_c - w_r:])
    if sorted(spec.tweezer_sites) != walls:
        raise PartitionError(f"tweezers at {spec.tweezer_sites} do not match wall sites {walls}")
    bath = tuple(i for i in range(spec.n_ions) if not start <= i < start + n_c)
    return Partition(cav, bath, n_s, w_l, w_r)


def walled_array(spec: IonArraySpec, cavity_center: int, n_s: int, w: int, omega_ot: float) -> IonArraySpec:
    """Copy of ``spec`` with ``w + w`` tweezers of strength ``omega_ot`` around a cavity."""
    n_c = n_s + 2 * w
    start = cavity_center - n_c // 2
    sites = list(range(start, start + w)) + list(range(start + n_c - w, start + n_c))
    return spec.with_tweezers([(i, omega_ot) for i in sites])


@dataclass
class ModeDecomposition:
    omega_c: np.ndarray
    omega_b: np.ndarray
    u_c: np.ndarray
    u_b: np.ndarray
    g: np.ndarray
    wall_mode_flags: np.ndarray
    partition: Partition | None = None

    @property
    def cavity_modes(self) -> np.ndarray:
        """Indices of the non-wall cavity-part modes, ascending in frequency."""
        return np.flatnonzero(~self.wall_mode_flags)

    def coupling_block(self) -> np.ndarray:
        """Rebuild ``A_CB`` from ``g``; inverse of the coupling definition."""
        scaled = 2.0 * self.g * np.sqrt(np.outer(self.omega_c, self.omega_b))
        return self.u_c @ scaled @ self.u_b.T

    def save(self, path) -> None:
        """Write the versioned binary format: magic, version, JSON header
        with shapes, then float64/bool arrays in row-major order."""
        arrays = {"omega_c": self.omega_c, "omega_b": self.omega_b, "u_c": self.u_c,
                  "u_b": self.u_b, "g": self.g, "wall_mode_flags": self.wall_mode_flags.astype(np.uint8)}
        header = {
            "version": FORMAT_VERSION,
            "arrays": [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype)} for k, v in arrays.items()],
            "partition": None if self.partition is None else {
                "cavity_sites": list(self.partition.cavity_sites), "n_s": self.partition.n_s,
                "w_l": self.partition.w_l, "w_r": self.partition.w_r,
                "n_ions": self.partition.n_c + self.partition.n_b},
        }
        hb = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(np.uint32(FORMAT_VERSION).tobytes())
            fh.write(np.uint64(len(hb)).tobytes())
            fh.write(hb)
            for v in arrays.values():
                fh.write(np.ascontiguousarray(v).tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "ModeDecomposition":
        raw = Path(path).read_bytes()
        buf = io.BytesIO(raw)
        if buf.read(8) != _MAGIC:
            raise ValueError("not a decomposition file")
        version = int(np.frombuffer(buf.read(4), np.uint32)[0])
        if version != FORMAT_VERSION:
            raise ValueError(f"format version {version} != {FORMAT_VERSION}")
        hlen = int(np.frombuffer(buf.read(8), np.uint64)[0])
        header = json.loads(buf.read(hlen))
        out = {}
        for meta in header["arrays"]:
            name = meta["name"]
            dt = np.dtype(meta["dtype"])
            count = int(np.prod(meta["shape"]))
            data = buf.read(count * dt.itemsize)
            if len(data) != count * dt.itemsize:
                raise ValueError(f"truncated array {name}")
            out[name] = np.frombuffer(data, dtype=dt).reshape(meta["shape"]).copy()
        if buf.read(1):
            raise ValueError("trailing bytes")
        part = None
        if header["partition"] is not None:
            p = header["partition"]
            cav = tuple(p["cavity_sites"])
            bath = tuple(i for i in range(p["n_ions"]) if i not in set(cav))
            part = Partition(cav, bath, p["n_s"], p["w_l"], p["w_r"])
        return cls(out["omega_c"], out["omega_b"], out["u_c"], out["u_b"], out["g"],
                   out["wall_mode_flags"].astype(bool), part)


def _block_eigh(block: np.ndarray, label: str):
    try:
        lam, U = np.linalg.eigh(block)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigen-solve of the {label} block failed: {exc}") from exc
    scale = max(abs(lam).max(), 1.0)
    if lam.min() < -1e-8 * scale:
        raise np.linalg.LinAlgError(f"{label} block is not positive semi-definite (min eigenvalue {lam.min():.3g})")
    return np.sqrt(np.clip(lam, 0.0, None)), U


def decompose(A: np.ndarray, part: Partition) -> ModeDecomposition:
    if A.shape != (part.n_c + part.n_b,) * 2:
        raise ValueError("coupling matrix does not match the partition")
    C = np.asarray(part.cavity_sites)
    B = np.asarray(part.bath_sites)
    omega_c, u_c = _block_eigh(A[np.ix_(C, C)], "cavity")
    omega_b, u_b = _block_eigh(A[np.ix_(B, B)], "bath")
    if omega_c.min() <= 0 or omega_b.min() <= 0:
        raise np.linalg.LinAlgError("zero-frequency mode in a subsystem; is the array pinned anywhere?")
    g = 0.5 * (u_c.T @ A[np.ix_(C, B)] @ u_b) / np.sqrt(np.outer(omega_c, omega_b))
    flags = _flag_walls(u_c, omega_c, part)
    return ModeDecomposition(omega_c, omega_b, u_c, u_b, g, flags, part)


def _flag_walls(u_c: np.ndarray, omega_c: np.ndarray, part: Partition) -> np.ndarray:
    n_w = part.w_l + part.w_r
    flags = np.zeros(len(omega_c), dtype=bool)
    if n_w == 0:
        return flags
    rows = list(range(part.w_l)) + list(range(part.n_c - part.w_r, part.n_c))
    weight = (u_c[rows] ** 2).sum(axis=0)
    # stable sort on (-weight, -omega): ties go to the higher frequency
    order = np.lexsort((-omega_c, -np.round(weight, 12)))
    chosen, rest = order[:n_w], order[n_w:]
    flags[chosen] = True
    w_min = weight[chosen].min()
    w_rest = weight[rest].max() if len(rest) else 0.0
    if w_min < 0.5 or w_min - w_rest < 0.2:
        raise WallsIndistinctError(
            f"walls indistinct: wall-site weight of flagged modes {w_min:.3f} vs {w_rest:.3f} for the rest")
    return flags


@dataclass(frozen=True)
class BathDOS:
    """Triangular-kernel density of states of the bath, integrating to N_B."""

    omega_b: np.ndarray
    window: float

    def weights(self, omega: float) -> np.ndarray:
        """Kernel weight of every bath mode at ``omega``.

        Mass that would spill past a band edge is reflected back inside, so
        the estimate integrates to N_B over the band.
        """
        h = 0.5 * self.window
        lo, hi = self.omega_b[0], self.omega_b[-1]
        k = np.clip(1.0 - np.abs(self.omega_b - omega) / h, 0.0, None)
        if omega - lo < h:
            k += np.clip(1.0 - np.abs(2 * lo - self.omega_b - omega) / h, 0.0, None)
        if hi - omega < h:
            k += np.clip(1.0 - np.abs(2 * hi - self.omega_b - omega) / h, 0.0, None)
        return k / h

    def __call__(self, omega):
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        lo, hi = self.omega_b.min(), self.omega_b.max()
        out = np.array([self.weights(w).sum() for w in omega])
        out[(omega < lo) | (omega > hi)] = 0.0
        return out if out.size > 1 else float(out[0])

    @property
    def band(self) -> tuple[float, float]:
        return float(self.omega_b.min()), float(self.omega_b.max())


def level_spacing(omega_b: np.ndarray) -> float:
    return float((omega_b.max() - omega_b.min()) / (len(omega_b) - 1))


def default_window(omega_b: np.ndarray) -> float:
    return max(10 * level_spacing(omega_b), 0.02)


def bath_dos(omega_b: np.ndarray, window: float | None = None) -> BathDOS:
    omega_b = np.sort(np.asarray(omega_b, dtype=float))
    if len(omega_b) < 100:
        raise ValueError(f"bath too small for a density of states ({len(omega_b)} < 100 modes)")
    window = default_window(omega_b) if window is None else float(window)
    if window < level_spacing(omega_b):
        raise ValueError(f"window {window:.3g} is below the mean level spacing {level_spacing(omega_b):.3g}")
    return BathDOS(omega_b, window)


@dataclass
class DecayReport:
    modes: np.ndarray          # cavity-part mode indices (non-wall)
    omega: np.ndarray
    kappa: np.ndarray
    gbar2: np.ndarray
    rho: np.ndarray
    in_band: np.ndarray
    n_window: np.ndarray
    window: np.ndarray         # window actually used per mode

    def rows(self):
        for i in range(len(self.modes)):
            yield {"mode": int(self.modes[i]), "omega": float(self.omega[i]), "kappa": float(self.kappa[i]),
                   "gbar2": float(self.gbar2[i]), "rho": float(self.rho[i]), "in_band": bool(self.in_band[i]),
                   "window": float(self.window[i])}


MIN_WINDOW_MODES = 10


def adaptive_window(omega_b: np.ndarray, omega: float, base: float) -> float:
    """Smallest window >= ``base`` holding MIN_WINDOW_MODES bath modes within
    half a window of ``omega``."""
    d = np.sort(np.abs(omega_b - omega))
    need = d[MIN_WINDOW_MODES - 1] if len(d) >= MIN_WINDOW_MODES else np.inf
    return float(max(base, 2 * need * (1 + 1e-9) + 1e-15))


def decay_rates(modes: ModeDecomposition, window: float | None = None) -> DecayReport:
    """Golden-rule decay rate of every non-wall cavity mode.

    With ``window=None`` each mode uses the default window, widened where
    needed so that at least ten bath modes enter the average.  An explicit
    window is used as given and must satisfy that count itself.
    """
    dos = bath_dos(modes.omega_b, window)
    lo, hi = dos.band
    idx = modes.cavity_modes
    out = {k: np.zeros(len(idx)) for k in ("omega", "kappa", "gbar2", "rho", "window")}
    in_band = np.zeros(len(idx), dtype=bool)
    n_win = np.zeros(len(idx), dtype=int)
    for j, q in enumerate(idx):
        wq = modes.omega_c[q]
        out["omega"][j] = wq
        if not lo <= wq <= hi:
            log.info("cavity mode %d at %.4f lies outside the bath band [%.4f, %.4f]", q, wq, lo, hi)
            out["window"][j] = dos.window
            continue
        local = dos if window is not None else BathDOS(dos.omega_b, adaptive_window(dos.omega_b, wq, dos.window))
        out["window"][j] = local.window
        n_win[j] = int(np.count_nonzero(np.abs(local.omega_b - wq) < local.window / 2))
        if n_win[j] < MIN_WINDOW_MODES:
            raise DecayRateError(
                f"only {n_win[j]} bath modes within the window around mode {q}; use a larger window or more ions")
        K = local.weights(wq)
        rho = K.sum()
        gbar2 = float(K @ _sorted_g2(modes, q) / rho)
        in_band[j] = True
        out["rho"][j] = rho
        out["gbar2"][j] = gbar2
        out["kappa"][j] = 2 * np.pi * gbar2 * rho
    return DecayReport(idx, out["omega"], out["kappa"], out["gbar2"], out["rho"], in_band, n_win, out["window"])


def _sorted_g2(modes: ModeDecomposition, q: int) -> np.ndarray:
    # BathDOS sorts its frequencies; eigh output is already ascending
    order = np.argsort(modes.omega_b, kind="stable")
    return modes.g[q, order] ** 2


def cavity_decay(spec: IonArraySpec, cavity_center: int, n_s: int, w_l: int, w_r: int | None = None,
                 window: float | None = None):
    """Convenience: partition, decompose and compute rates in one call."""
    from .crystal import build_coupling_matrix

    part = partition(spec, cavity_center, n_s, w_l, w_r)
    modes = decompose(build_coupling_matrix(spec), part)
    return modes, decay_rates(modes, window)


def revival_time(part: Partition, c: float = 1.0) -> float:
    """Time (units 1/omega0) for emitted waves to cross the crystal and return."""
    return c * part.n_b


@dataclass
class EvolutionTrace:
    t: np.ndarray
    population: np.ndarray
    norm: np.ndarray
    kappa_fit: float
    fit_residual: float
    t_revival: float
    fit_end: float
    oscillatory: bool = field(default=False)

    def fit_mask(self) -> np.ndarray:
        return self.t <= self.fit_end

    def log_residual(self, kappa: float) -> float:
        """RMS of ``log p(t) + kappa t`` over the fit window."""
        m = self.fit_mask()
        return float(np.sqrt(np.mean((np.log(self.population[m]) + kappa * self.t[m]) ** 2)))

    def first_revival(self, floor: float = 1e-2, rise: float = 10.0) -> float | None:
        """Time at which the population first climbs back after decaying
        below ``floor``: above both ``floor`` and ``rise`` x the running minimum."""
        p = self.population
        below = np.flatnonzero(p < floor)
        if not len(below):
            return None
        running_min = np.minimum.accumulate(p)
        cand = np.flatnonzero((np.arange(len(p)) > below[0]) & (p > floor) & (p > rise * running_min))
        return float(self.t[cand[0]]) if len(cand) else None


@dataclass
class FullModes:
    """Eigen-decomposition of the whole array, reusable across traces."""

    omega: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, A: np.ndarray) -> "FullModes":
        lam, V = np.linalg.eigh(A)
        return cls(np.sqrt(np.clip(lam, 0.0, None)), V)


MARKOV_RESIDUAL = 0.2


def exact_population_trace(A: np.ndarray, part: Partition, q: int, t_max: float, *,
                           n_samples: int = 2001, full: FullModes | None = None,
                           modes: ModeDecomposition | None = None, revival_c: float = 1.0) -> EvolutionTrace:
    """Energy fraction left in cavity-part mode ``q`` under the exact
    (non-rotating-wave) harmonic dynamics of the full array.

    The initial condition displaces the cavity block along mode ``q`` with
    zero velocity.  The population is ``|alpha_q|^2`` with
    ``alpha_q ~ nu_q Q_q + i dQ_q/dt`` normalised to one at ``t = 0``.
    """
    modes = decompose(A, part) if modes is None else modes
    full = FullModes.of(A) if full is None else full
    nu = modes.omega_c[q]
    x0 = np.zeros(A.shape[0])
    x0[list(part.cavity_sites)] = modes.u_c[:, q]
    y0 = full.vectors.T @ x0
    W = full.omega
    t = np.linspace(0.0, t_max, n_samples)
    phase = np.outer(t, W)
    cos, sin = np.cos(phase), np.sin(phase)
    w2 = y0 ** 2
    xi = cos @ w2
    eta = -(sin @ (w2 * W))
    population = (nu**2 * xi**2 + eta**2) / nu**2
    norm = (cos**2 + sin**2) @ (W**2 * w2) / nu**2

    t_rev = revival_time(part, revival_c)
    fit_end = min(t_max, 0.8 * t_rev)
    if t_max > 0.8 * t_rev:
        warnings.warn(f"t_max={t_max:g} passes the revival window; fitting only up to {fit_end:g}", stacklevel=2)
    sel = np.flatnonzero(t <= fit_end)
    low = np.flatnonzero(population[sel] < 1e-3)
    stop = sel[low[0]] if len(low) else sel[-1] + 1
    stop = max(stop, 3)
    tt, lp = t[:stop], np.log(population[:stop])
    slope, icpt = np.polyfit(tt, lp, 1)
    resid = float(np.sqrt(np.mean((lp - (slope * tt + icpt)) ** 2)))
    trace = EvolutionTrace(t, population, norm, float(-slope), resid, t_rev, float(t[stop - 1]))
    trace.oscillatory = resid > MARKOV_RESIDUAL
    if trace.oscillatory:
        warnings.warn("visible large oscillations in the cavity population; the bath is not Markovian here",
                      NonMarkovianWarning, stacklevel=2)
    return trace


def config_key(spec: IonArraySpec, part: Partition) -> str:
    payload = json.dumps({"spec": spec.to_dict(), "partition": part.to_dict(), "version": FORMAT_VERSION},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:32]
