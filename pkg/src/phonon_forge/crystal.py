"""Ion crystal description, unit system and the longitudinal coupling matrix.

All downstream modules work in units where the Coulomb exchange frequency
``omega0 = sqrt(e^2 / (4 pi eps0 m d0^3))`` equals one.  With the potential
written as ``(m omega0^2 / 2) z^T A z`` the normal-mode frequencies are
``omega0 * sqrt(eig(A))``; two free ions then breathe at exactly ``2 omega0``.

Note on the exponent: the defining expression is sometimes printed with a
``-1/2`` power.  Only the ``+1/2`` root has units of frequency and gives
``omega0 ~ 2 pi x 0.5 MHz`` for 40Ca+ at 7 um, so that is what is used here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.constants as const

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class IonSpecies:
    """Mass [kg], charge [C] and natural linewidth gamma [rad/s] of an ion."""

    name: str
    mass: float
    linewidth: float
    charge: float = const.e

    def __post_init__(self):
        if not (self.mass > 0 and self.charge > 0 and self.linewidth > 0):
            raise ValueError(f"{self.name}: mass, charge and linewidth must be positive")


CA40 = IonSpecies("40Ca+", mass=39.962591 * const.atomic_mass, linewidth=TWO_PI * 21.6e6)

SPECIES = {"40Ca+": CA40, "Ca40": CA40, "ca40": CA40}


@dataclass(frozen=True)
class IonArraySpec:
    """A uniform linear crystal of ``n_ions`` ions with optional tweezers.

    Parameters
    ----------
    species : IonSpecies
    n_ions : int
        Number of ions (at least 3).
    d0 : float
        Uniform ion separation in metres.
    edge_trap : sequence of float, optional
        Per-site trap frequencies in units of omega0.  Defaults to zeros
        (box-like trap).
    tweezers : sequence of (site, omega_ot)
        Tweezered sites and their pinning frequency in rad/s.
    """

    species: IonSpecies
    n_ions: int
    d0: float
    edge_trap: tuple = field(default=())
    tweezers: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "edge_trap", tuple(float(v) for v in self.edge_trap))
        object.__setattr__(self, "tweezers", tuple((int(i), float(w)) for i, w in self.tweezers))
        if self.n_ions < 3:
            raise ValueError(f"need at least 3 ions, got {self.n_ions}")
        if not self.d0 > 0:
            raise ValueError("d0 must be positive")
        if self.edge_trap and len(self.edge_trap) != self.n_ions:
            raise ValueError("edge_trap must list one frequency per ion")
        if any(v < 0 for v in self.edge_trap):
            raise ValueError("edge_trap frequencies must be non-negative")
        sites = [i for i, _ in self.tweezers]
        if len(set(sites)) != len(sites):
            raise ValueError("tweezer sites must be unique")
        for i, w in self.tweezers:
            if not 0 <= i < self.n_ions:
                raise ValueError(f"tweezer site {i} outside [0, {self.n_ions})")
            if not w >= 0:
                raise ValueError(f"tweezer at site {i} has negative frequency {w}")

    @property
    def tweezer_sites(self) -> list[int]:
        return sorted(i for i, _ in self.tweezers)

    def with_tweezers(self, tweezers: Sequence[tuple[int, float]]) -> "IonArraySpec":
        return IonArraySpec(self.species, self.n_ions, self.d0, self.edge_trap, tuple(tweezers))

    def to_dict(self) -> dict:
        return {
            "species": self.species.name,
            "mass": self.species.mass,
            "charge": self.species.charge,
            "linewidth": self.species.linewidth,
            "n_ions": self.n_ions,
            "d0": self.d0,
            "edge_trap": list(self.edge_trap),
            "tweezers": [list(t) for t in self.tweezers],
        }


def unit_scale(spec: IonArraySpec) -> float:
    """Angular frequency unit omega0 in rad/s."""
    sp = spec.species
    return float(np.sqrt(sp.charge**2 / (4 * np.pi * const.epsilon_0 * sp.mass * spec.d0**3)))


def _coulomb_matrix(n_ions: int) -> np.ndarray:
    u = np.arange(n_ions, dtype=float)
    A = np.zeros((n_ions, n_ions))
    for i in range(n_ions - 1):
        # one pass over i < j keeps A bitwise symmetric
        c = -2.0 / np.abs(u[i + 1:] - u[i]) ** 3
        A[i, i + 1:] = c
        A[i + 1:, i] = c
    np.fill_diagonal(A, -A.sum(axis=1))
    return A


def build_coupling_matrix(spec: IonArraySpec, *, allow_small: bool = False) -> np.ndarray:
    """Dimensionless longitudinal coupling matrix A (units of m omega0^2).

    Equilibrium positions are the ideal lattice ``u_i = i``.  The diagonal
    carries the full Coulomb sum plus ``nu_i^2`` from the trap and
    ``(omega_ot / omega0)^2`` on tweezered sites.

    ``allow_small=True`` bypasses the three-ion minimum for diagnostics on
    a bare ``n_ions``; pass an int instead of a spec in that case.
    """
    if isinstance(spec, (int, np.integer)):
        if not allow_small:
            raise ValueError("pass an IonArraySpec, or allow_small=True for a bare ion count")
        if spec < 2:
            raise ValueError("need at least 2 ions")
        return _coulomb_matrix(int(spec))

    A = _coulomb_matrix(spec.n_ions)
    diag = np.zeros(spec.n_ions)
    if spec.edge_trap:
        diag += np.asarray(spec.edge_trap) ** 2
    w0 = unit_scale(spec)
    for i, w in spec.tweezers:
        diag[i] += (w / w0) ** 2
    A[np.diag_indices_from(A)] += diag
    return A


def mode_frequencies(A: np.ndarray) -> np.ndarray:
    """Normal-mode frequencies in units of omega0, ascending."""
    lam = np.linalg.eigvalsh(A)
    return np.sqrt(np.clip(lam, 0.0, None))


def doppler_occupation(gamma, omega):
    """Mean thermal occupation of a mode of frequency ``omega`` at the
    Doppler temperature ``hbar gamma / (2 k_B)``.

    Both arguments share a unit (rad/s, or units of omega0).
    """
    gamma = np.asarray(gamma, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(gamma <= 0) or np.any(omega <= 0):
        raise ValueError("gamma and omega must be positive")
    out = 1.0 / np.expm1(2.0 * omega / gamma)
    return float(out) if out.ndim == 0 else out


def zero_point_length(omega: float, species: IonSpecies) -> float:
    return float(np.sqrt(const.hbar / (2.0 * species.mass * omega)))


def displacement_estimate(n: float, omega: float, species: IonSpecies, *, thermal: bool = False) -> float:
    """Motional amplitude in metres for ``n`` phonons in a mode at ``omega`` rad/s.

    Coherent amplitude ``sqrt(2n) x_zpf`` by default; with ``thermal=True``
    the rms spread ``sqrt(2n + 1) x_zpf`` of a thermal state.
    """
    if n < 0:
        raise ValueError("phonon number must be non-negative")
    x0 = zero_point_length(omega, species)
    return float(np.sqrt(2 * n + (1 if thermal else 0)) * x0)


def time_in_seconds(t: float, omega0: float) -> dict:
    """Convert a dimensionless time ``t`` (units 1/omega0) to seconds.

    Returns both readings: ``angular`` uses ``t / omega0``; ``cycle`` uses
    ``t / (omega0 / 2 pi)``.  Quoted laboratory timescales are sometimes given
    in the second convention, so neither is picked silently.
    """
    return {"angular": t / omega0, "cycle": t * TWO_PI / omega0}
