"""PNG figures for the CLI reports (rendered off-screen)."""
from __future__ import annotations

import numpy as np
from matplotlib.figure import Figure


def _save(fig, path, provenance):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Description": provenance})


def plot_steady(curve, phi, path, provenance=""):
    fig = Figure(figsize=(9, 4))
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(curve.theta, phi, "k-")
    ax1.set_xlabel(r"$\theta$")
    ax1.set_ylabel("steady profile")
    closed = np.vstack([curve.nodes, curve.nodes[:1]])
    vals = np.append(phi, phi[0])
    ax2.plot(closed[:, 0], closed[:, 1], color="0.7", lw=0.8)
    sc = ax2.scatter(closed[:, 0], closed[:, 1], c=vals, s=12, cmap="viridis")
    fig.colorbar(sc, ax=ax2)
    ax2.set_aspect("equal")
    ax2.set_title("profile on the boundary")
    _save(fig, path, provenance)


def plot_trajectory(traj, path, provenance=""):
    d = traj.diagnostics
    label = "t" if traj.mode.value == "Physical" else r"$\tau$"
    fig = Figure(figsize=(10, 4))
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(traj.times, d["min"], label="min")
    ax1.plot(traj.times, d["max"], label="max")
    ax1.set_xlabel(label)
    ax1.legend()
    ax2.plot(traj.times, d["Z"], label="Z")
    ax2.plot(traj.times, d["I"], label="I")
    ax2.plot(traj.times, d["G"], label="G")
    ax2.set_xlabel(label)
    ax2.legend()
    _save(fig, path, provenance)


def plot_spectrum(spectrum, path, provenance="", count=40):
    mu = spectrum.mu[:count]
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    colors = np.where(mu < -spectrum.zero_tol, "tab:red",
                      np.where(mu > spectrum.zero_tol, "tab:blue", "tab:gray"))
    ax.scatter(np.arange(1, len(mu) + 1), mu, c=colors, s=14)
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xlabel("index")
    ax.set_ylabel(r"$\mu$")
    ax.set_title(f"gamma_p = {spectrum.gamma_p:.6g}")
    _save(fig, path, provenance)


def plot_rates(taus, hnorm, report, path, provenance=""):
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    keep = hnorm > 0
    ax.semilogy(taus[keep], hnorm[keep], "k.", ms=3, label=r"$\|h\|$")
    if report is not None and report.model.value == "Exponential":
        t0, t1 = report.window
        sel = (taus >= t0) & (taus <= t1) & keep
        if sel.any():
            ref = hnorm[sel][0] * np.exp(-report.gamma_fit * (taus[sel] - taus[sel][0]))
            ax.semilogy(taus[sel], ref, "r-", label=f"rate {report.gamma_fit:.4f}")
    ax.set_xlabel(r"$\tau$")
    ax.legend()
    _save(fig, path, provenance)
