"""Ordered quadrature moments ``<P^n X^m>`` and the statistics built from them.

Conventions: ``X = a^dag + a``, ``P = i (a^dag - a)``, so ``[X, P] = 2i`` and
the vacuum has ``<X^2> = <P^2> = 1``.  For any state ``<PX> - <XP> = -2i``;
a Gaussian with symmetric covariance has ``<PX> = <P><X> - i``.
"""
from __future__ import annotations

import numpy as np

from ._kernels import IDX, N_MOM, PAIRS


def index(n: int, m: int) -> int:
    """Position of ``<P^n X^m>`` inside one mode's moment block."""
    if not (n >= 0 and m >= 0 and 1 <= n + m <= 4):
        raise KeyError(f"moment P^{n} X^{m} is not tracked")
    return int(IDX[n, m])


def gaussian_moments(x: float, p: float, var_x: float, var_p: float, cov_sym: float = 0.0) -> np.ndarray:
    """All tracked ordered moments of a Gaussian state (Isserlis/Wick).

    ``cov_sym`` is the symmetrised covariance ``<{dX, dP}>/2``; the ordered
    pair contraction picks up the commutator, ``<dP dX> = cov_sym - i``.
    """
    mean = {"P": p, "X": x}

    def contraction(a, b):
        if a == b:
            return var_x if a == "X" else var_p
        return cov_sym - 1j if (a, b) == ("P", "X") else cov_sym + 1j

    def wick(ops):
        if not ops:
            return 1.0 + 0j
        head, rest = ops[0], ops[1:]
        total = mean[head] * wick(rest)
        for i, b in enumerate(rest):
            total += contraction(head, b) * wick(rest[:i] + rest[i + 1:])
        return total

    return np.array([wick(("P",) * n + ("X",) * m) for n, m in PAIRS], dtype=complex)


def thermal_coherent_block(energy: float, n_th: float) -> np.ndarray:
    """Displaced thermal state with ``<X> = sqrt(2 E)``, ``<P> = 0``."""
    if energy < 0 or n_th < 0:
        raise ValueError("energy and n_th must be non-negative")
    v = 2 * n_th + 1
    return gaussian_moments(np.sqrt(2 * energy), 0.0, v, v)


def mean_n(block: np.ndarray) -> float:
    return float(((block[index(0, 2)] + block[index(2, 0)]) / 4 - 0.5).real)


def mean_n2(block: np.ndarray) -> float:
    x4, p4 = block[index(0, 4)].real, block[index(4, 0)].real
    p2x2 = block[index(2, 2)].real
    x2, p2 = block[index(0, 2)].real, block[index(2, 0)].real
    im_px = block[index(1, 1)].imag
    return float((x4 + p4 + 2 * p2x2) / 16 - (x2 + p2 + 2 * im_px + 1) / 4)


def energy(block: np.ndarray) -> float:
    """Classical energy ``(<X>^2 + <P>^2) / 2``."""
    return float((block[index(0, 1)].real ** 2 + block[index(1, 0)].real ** 2) / 2)


def phonon_stats(block: np.ndarray) -> tuple[float, float, float]:
    """(<n>, <n^2>, g2) of one mode; g2 needs a positive mean."""
    n1, n2 = mean_n(block), mean_n2(block)
    if n1 <= 0:
        raise ValueError("g2 is undefined at zero mean phonon number")
    return n1, n2, (n2 - n1) / n1**2


__all__ = ["N_MOM", "PAIRS", "index", "gaussian_moments", "thermal_coherent_block", "mean_n", "mean_n2",
           "energy", "phonon_stats"]
