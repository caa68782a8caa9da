"""Figures for the CLI reports, rendered off-screen to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_convergence(rep, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    h = np.asarray(rep.hs)
    for c, e in rep.errors.items():
        if c == "all":
            continue
        o = rep.orders[c][0]
        ax.loglog(h, e, "o-", label=f"{c} (order {o:.2f})")
    ax.loglog(h, rep.hamiltonian_errors, "s--", label=f"H (order {rep.orders['hamiltonian'][0]:.2f})")
    ref = np.nanmax(rep.errors["all"])
    if np.isfinite(ref):
        ax.loglog(h, ref * (h / h[0]) ** 2, "k:", lw=0.8, label="slope 2")
    ax.set_xlabel("relative step size h")
    ax.set_ylabel("L2 error")
    ax.set_title(f"{rep.benchmark}: {rep.scheme} / {rep.integrator}")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_energy(rep, path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    t = rep.times
    axes[0].plot(t, rep.hamiltonian, label="H(x_n)")
    axes[0].plot(t, rep.balance, label="H(x_n) - H(x_0) - supply")
    axes[0].axhline(0.0, color="k", lw=0.5)
    axes[0].set_xlabel("t [s]")
    axes[0].set_title(f"{rep.benchmark}: {rep.integrator}, h={rep.h_rel:.2g}")
    axes[0].legend(fontsize=8)
    if rep.j_step_error.size:
        acc = np.cumsum(rep.j_step_error.sum(axis=1))
        axes[1].semilogy(t[1:], np.maximum(acc, 1e-300), label="accumulated")
        axes[1].semilogy(t[1:], np.maximum(rep.j_step_error.max(axis=1), 1e-300), ".", ms=2, label="per step")
        axes[1].legend(fontsize=8)
    axes[1].set_xlabel("t [s]")
    axes[1].set_title("J-subflow |‖x_b‖_E - ‖x_a‖_E|")
    return _save(fig, path)


def plot_epsilon(study, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for c, e in study.errors.items():
        ax.loglog(study.epsilons, e, "o-", label=c)
    ax.axvline(study.kink, color="k", ls=":", lw=0.8, label=f"kink {study.kink:.0e}")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("L2 error")
    ax.set_title(f"{study.benchmark}, h={study.h_rel:.1e}, slope {study.slope:.2f}")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_trajectory(traj, bench, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, nm in enumerate(bench.names):
        ax.plot(traj.times, traj.states[:, i], label=nm, lw=1)
    ax.set_xlabel("t [s]")
    ax.set_title(bench.id)
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)
