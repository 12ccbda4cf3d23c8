"""Optional PNG renderings of run outputs (``--figures``)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def decay_vs_wall(rows, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    modes = sorted({r["mode_rank"] for r in rows})
    for m in modes:
        sel = sorted((r["w"], r["kappa"]) for r in rows if r["mode_rank"] == m and r["in_band"])
        if sel:
            w, k = zip(*sel)
            ax.semilogy(w, k, "o-", label=f"mode {m}")
    ax.set_xlabel("wall thickness w")
    ax.set_ylabel(r"$\kappa_q/\omega_0$")
    ax.legend(fontsize=7)
    _save(fig, path)


def population_trace(t, p, kappa, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.semilogy(t, p, label="exact")
    ax.semilogy(t, np.exp(-kappa * t), "--", label="golden rule")
    ax.set_xlabel(r"$\omega_0 t$")
    ax.set_ylabel("population")
    ax.set_ylim(1e-4, 1.5)
    ax.legend()
    _save(fig, path)


def single_mode_sweep(rows, path):
    x = [r["eta_omega"] for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.5))
    a1.plot(x, [r["gain_over_kappa"] for r in rows])
    a1.set_xlabel(r"$\eta\Omega/\omega_0$")
    a1.set_ylabel(r"$G/\kappa$")
    a2.plot(x, [r["g2"] for r in rows], color="C1")
    a2.set_xlabel(r"$\eta\Omega/\omega_0$")
    a2.set_ylabel(r"$g^{(2)}(0)$")
    b = a2.twinx()
    b.semilogy(x, [r["mean_n"] for r in rows], color="C2")
    b.set_ylabel(r"$\langle n\rangle_s$")
    _save(fig, path)


def energy_trajectory(t, E, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.semilogy(t, np.maximum(E[0], 1e-3), label="COM")
    ax.semilogy(t, np.maximum(E[1], 1e-3), label="BR")
    ax.set_xlabel(r"$\omega_0 t$")
    ax.set_ylabel(r"$E_q$")
    ax.legend()
    _save(fig, path)


def phase_map(eta_omega, E_com0, n_com, n_br, path):
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, n, name in zip(axes, (n_com, n_br), ("COM", "BR")):
        if len(eta_omega) > 1 and len(E_com0) > 1:
            im = ax.pcolormesh(eta_omega, E_com0, np.log10(np.maximum(n.T, 1e-3)), shading="nearest")
            fig.colorbar(im, ax=ax, label=rf"$\log_{{10}}\langle n_{{{name}}}\rangle$")
            ax.set_ylabel(r"$E_{COM}(0)$")
        else:
            ax.semilogy(eta_omega if len(eta_omega) > 1 else E_com0, n.ravel(), "o-")
            ax.set_ylabel(rf"$\langle n_{{{name}}}\rangle$")
        ax.set_xlabel(r"$\eta\Omega/\omega_0$")
    _save(fig, path)
