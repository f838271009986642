"""
Report figures (phase field, concentrations, convergence history).

Uses the non-interactive Agg backend; every function writes a file and
closes its figure.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import matplotlib.tri as mtri  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "lines.linewidth": 1.0,
    "savefig.dpi": 150,
    "figure.facecolor": "white",
}


def _triangulation(mesh):
    return mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)


def _field_panel(ax, tri, values, title, cmap, vmin=None, vmax=None):
    pc = ax.tripcolor(tri, values, shading="gouraud", cmap=cmap, vmin=vmin, vmax=vmax)
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    return pc


def plot_phase_field(path, mesh, phi, title="phase field"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 4.0))
        tri = _triangulation(mesh)
        pc = _field_panel(ax, tri, phi, title, "gray_r", 0.0, 1.0)
        ax.tricontour(tri, phi, levels=[0.5], colors="tab:red", linewidths=0.8)
        fig.colorbar(pc, ax=ax, shrink=0.8)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_state(path, mesh, phi, state):
    """Potential and both concentrations with the phi = 1/2 contour."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(8.0, 3.6))
        tri = _triangulation(mesh)
        panels = [(state.psi, "potential", "viridis"),
                  (state.c[0], "cations", "Reds"),
                  (state.c[1], "anions", "Blues")]
        for ax, (vals, title, cmap) in zip(axes, panels):
            pc = _field_panel(ax, tri, vals, title, cmap)
            ax.tricontour(tri, phi, levels=[0.5], colors="k", linewidths=0.6)
            fig.colorbar(pc, ax=ax, shrink=0.8)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_history(path, history):
    it = history.column("iter")
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        ax1.plot(it, history.column("penalized_energy"), label="penalized energy")
        ax1.plot(it, history.column("objective"), label="objective")
        ax1.set_xlabel("iteration")
        ax1.legend(frameon=False)
        err = np.maximum(history.column("volume_error"), 1e-16)
        ax2.semilogy(it, err, color="tab:green")
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("|V - V0|")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
