"""
Self-checks shared by the CLI and the test suite: adjoint gradient check
against central finite differences, and the electroneutral equilibrium case.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import fem
from .materials import PhysicalParams
from .mesh import TriangleMesh
from .optimizer import compute_sensitivity
from .pnp import SolverTolerances, gummel_solve, objective

FD_STEPS = (1e-4, 1e-5, 1e-6)


@dataclass
class DirectionCheck:
    adjoint: float
    fd: dict  # step -> finite-difference value
    rel_errors: dict  # step -> relative error

    @property
    def best_step(self) -> float:
        return min(self.rel_errors, key=self.rel_errors.get)

    @property
    def rel_error(self) -> float:
        return self.rel_errors[self.best_step]


def tight_tolerances(tols: SolverTolerances | None = None) -> SolverTolerances:
    """Tolerances fine enough that Gummel noise sits far below FD truncation."""
    tols = tols or SolverTolerances()
    return dataclasses.replace(tols, gummel_tol=min(tols.gummel_tol, 1e-13),
                               newton_tol=min(tols.newton_tol, 1e-13))


def dirichlet_cutoff(mesh: TriangleMesh) -> np.ndarray:
    """Smooth nonnegative field vanishing on the Dirichlet boundary.

    Solves ``-lap u = 1`` with ``u = 0`` on Gamma_in and Gamma_2 and scales
    the result to unit maximum.
    """
    A = fem.assemble_weighted_stiffness(mesh, 1.0)
    b = fem.lumped_mass(mesh)
    constrained = {int(v): 0.0 for v in mesh.dirichlet_vertices()}
    u = fem.solve_linear(fem.LinearSystem(A, b, constrained))
    return u / np.max(np.abs(u))


def random_directions(mesh: TriangleMesh, n: int, seed: int = 0, modes: int = 3):
    """Smooth random fields (low Fourier modes) that vanish on Gamma_in, Gamma_2."""
    rng = np.random.default_rng(seed)
    x = mesh.vertices
    lo, hi = x.min(axis=0), x.max(axis=0)
    s = (x - lo) / (hi - lo)
    cut = dirichlet_cutoff(mesh)
    out = []
    for _ in range(n):
        a = rng.normal(size=(modes, modes))
        f = sum(a[i, j] * np.cos(i * np.pi * s[:, 0]) * np.cos(j * np.pi * s[:, 1])
                for i in range(modes) for j in range(modes))
        theta = cut * f
        theta[mesh.dirichlet_vertices()] = 0.0
        out.append(theta)
    return out


def gradient_check(mesh: TriangleMesh, phi, phys: PhysicalParams,
                   tols: SolverTolerances | None = None, n_directions: int = 5, seed: int = 0,
                   steps=FD_STEPS, mode: str = "discrete"):
    """Compare adjoint directional derivatives with central differences.

    Every perturbed state is fully re-converged (warm-started from the
    unperturbed one). Returns a list of :class:`DirectionCheck`.
    """
    tols = tight_tolerances(tols)
    phi = np.asarray(phi, dtype=float)
    state = gummel_solve(mesh, phi, phys, tols)
    if not state.converged:
        raise fem.SolverError("state solve failed at the base point")
    sens = compute_sensitivity(mesh, phi, state, phys, mode)

    def J(p):
        st = gummel_solve(mesh, p, phys, tols, warm_start=state)
        if not st.converged:
            raise fem.SolverError("state solve failed at a perturbed point")
        return objective(mesh, st.c, phys.z)

    results = []
    for theta in random_directions(mesh, n_directions, seed):
        ad = float(sens @ theta)
        fd, rel = {}, {}
        for t in steps:
            fd[t] = (J(phi + t * theta) - J(phi - t * theta)) / (2.0 * t)
            rel[t] = abs(ad - fd[t]) / max(abs(fd[t]), 1e-300)
        results.append(DirectionCheck(ad, fd, rel))
    return results


@dataclass
class EquilibriumCheck:
    psi_error: float
    c_errors: tuple
    sweeps: int
    converged: bool

    def passed(self, tol: float = 1e-10, max_sweeps: int = 2) -> bool:
        return (self.converged and self.sweeps <= max_sweeps and self.psi_error <= tol
                and max(self.c_errors) <= tol)


def equilibrium_check(mesh: TriangleMesh, phys: PhysicalParams,
                      tols: SolverTolerances | None = None) -> EquilibriumCheck:
    """Zero applied potential, equal bulk data on both Dirichlet parts, phi = 1."""
    c_inf = phys.c_inf
    params = dataclasses.replace(phys, g_gamma2=0.0, g_gammain=0.0, c_inf_gamma2=c_inf)
    phi = np.ones(mesh.n_vertices)
    st = gummel_solve(mesh, phi, params, tols or SolverTolerances())
    return EquilibriumCheck(
        psi_error=float(np.max(np.abs(st.psi))),
        c_errors=tuple(float(np.max(np.abs(c - c_inf))) for c in st.c),
        sweeps=st.gummel_iterations,
        converged=st.converged,
    )
