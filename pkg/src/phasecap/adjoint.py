"""
Adjoint equations and the shape sensitivity of the net-charge objective.

Two routes are provided. ``solve_adjoint`` / ``assemble_sensitivity``
discretize the continuous adjoint system and the continuous derivative
formula with P1 elements (plain Galerkin, centroid quadrature).
``discrete_sensitivity`` differentiates the inverse-averaged discrete state
exactly and is therefore the true gradient of the discrete objective.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import Factorization, SolverError
from .materials import PhysicalParams
from .mesh import TriangleMesh
from .pnp import Discretization, StateSolution, state_jacobians


@dataclass
class AdjointSolution:
    s: tuple
    zeta: np.ndarray
    residual: float


def _check_shapes(mesh: TriangleMesh, phi, state: StateSolution):
    n = mesh.n_vertices
    fields = [("phi", phi), ("psi", state.psi)]
    fields += [(f"c{i + 1}", c) for i, c in enumerate(state.c)]
    for name, f in fields:
        if np.shape(f) != (n,):
            raise ValueError(f"{name} has shape {np.shape(f)}, mesh has {n} vertices")


def adjoint_system(mesh: TriangleMesh, phi, state: StateSolution, params: PhysicalParams):
    """Assemble the coupled adjoint block system.

    Unknowns are ordered ``[s_1, s_2, zeta]``. Returns ``(A, b)`` without
    boundary conditions applied.
    """
    _check_shapes(mesh, phi, state)
    disc = Discretization(mesh, phi, params)
    n = mesh.n_vertices
    third = disc.areas / 3.0
    grad_psi = fem.element_gradient(mesh, state.psi, disc.grads)
    grad_phi = fem.element_gradient(mesh, phi, disc.grads)
    M = fem.assemble_mass(mesh)
    m = fem.lumped_mass(mesh)
    nsp = len(params.z)

    blocks = [[None] * (nsp + 1) for _ in range(nsp + 1)]
    b = np.zeros((nsp + 1) * n)
    for i, z in enumerate(params.z):
        w = z * grad_psi - params.alpha0 * grad_phi
        # row a (test l_a), column b (trial l_b): D (grad l_b . grad l_a + |K|/3 grad l_b . w)
        conv = np.einsum("kbd,kd->kb", disc.grads, w)
        local = disc.D[:, None, None] * (disc.S + third[:, None, None] * conv[:, None, :])
        blocks[i][i] = fem.assemble_local(mesh, local)
        blocks[i][nsp] = -z * M
        b[i * n:(i + 1) * n] = -z * m

        cbar = fem.centroid_values(mesh, state.c[i])
        blocks[nsp][i] = fem.assemble_local(mesh, (disc.D * z * cbar)[:, None, None] * disc.S)
    blocks[nsp][nsp] = disc.A_eps
    for r in range(nsp + 1):
        for c in range(nsp + 1):
            if blocks[r][c] is None:
                blocks[r][c] = sp.csr_matrix((n, n))
    return sp.bmat(blocks, format="csr"), b


def solve_adjoint(mesh: TriangleMesh, phi, state: StateSolution,
                  params: PhysicalParams) -> AdjointSolution:
    """Monolithic direct solve of the adjoint system with zero Dirichlet data."""
    A, b = adjoint_system(mesh, phi, state, params)
    n = mesh.n_vertices
    nsp = len(params.z)
    dirichlet = mesh.dirichlet_vertices()
    constrained = {int(k * n + v): 0.0 for k in range(nsp + 1) for v in dirichlet}
    system = fem.apply_dirichlet(fem.LinearSystem(A, b, constrained))
    try:
        x = Factorization(system.matrix).solve(system.rhs)
    except SolverError as exc:
        cond = _condition_estimate(system.matrix)
        raise SolverError(f"adjoint factorization failed ({exc}); "
                          f"1-norm condition estimate {cond:.2e}") from None
    res = float(np.linalg.norm(system.matrix @ x - system.rhs))
    s = tuple(x[i * n:(i + 1) * n] for i in range(nsp))
    return AdjointSolution(s=s, zeta=x[nsp * n:], residual=res)


def _condition_estimate(A):
    try:
        return float(np.linalg.cond(A.toarray(), 1)) if A.shape[0] <= 3000 else float("nan")
    except np.linalg.LinAlgError:
        return float("inf")


def assemble_sensitivity(mesh: TriangleMesh, phi, state: StateSolution, adj: AdjointSolution,
                         params: PhysicalParams) -> np.ndarray:
    """Nodal load of the continuous derivative formula.

    Entry ``a`` is the derivative of the objective in the direction of the
    hat function ``l_a``. Material derivatives and concentrations are
    evaluated at element centroids. Dirichlet entries are zero.
    """
    _check_shapes(mesh, phi, state)
    disc = Discretization(mesh, phi, params)
    t = mesh.triangles
    areas = disc.areas
    grads = disc.grads
    grad_psi = fem.element_gradient(mesh, state.psi, grads)
    grad_phi = fem.element_gradient(mesh, phi, grads)
    grad_zeta = fem.element_gradient(mesh, adj.zeta, grads)

    per_elem = -disc.deps * np.einsum("kd,kd->k", grad_psi, grad_zeta) * areas
    local = np.zeros((mesh.n_triangles, 3))
    for i, z in enumerate(params.z):
        c = np.asarray(state.c[i])
        cbar = fem.centroid_values(mesh, c)
        grad_c = fem.element_gradient(mesh, c, grads)
        grad_s = fem.element_gradient(mesh, adj.s[i], grads)
        flux = grad_c + (z * cbar)[:, None] * grad_psi - (params.alpha0 * cbar)[:, None] * grad_phi
        per_elem -= disc.dD * np.einsum("kd,kd->k", flux, grad_s) * areas
        local += (disc.D * params.alpha0 * cbar * areas)[:, None] * \
            np.einsum("kad,kd->ka", grads, grad_s)
    local += (per_elem / 3.0)[:, None]
    load = np.zeros(mesh.n_vertices)
    np.add.at(load, t, local)
    load[mesh.dirichlet_vertices()] = 0.0
    return load


def discrete_sensitivity(mesh: TriangleMesh, phi, state: StateSolution,
                         params: PhysicalParams) -> np.ndarray:
    """Exact gradient of the discrete objective with respect to nodal phi.

    Solves the transposed state Jacobian system for the multipliers of the
    inverse-averaged Slotboom discretization.
    """
    phi = np.asarray(phi, dtype=float)
    _check_shapes(mesh, phi, state)
    n = mesh.n_vertices
    nsp = len(params.z)
    R_u, R_phi = state_jacobians(mesh, phi, state, params)
    free = mesh.free_vertices()
    free_all = np.concatenate([k * n + free for k in range(nsp + 1)])

    w = fem.lumped_mass(mesh)
    J_u = np.zeros((nsp + 1) * n)
    J_phi = np.zeros(n)
    for i, z in enumerate(params.z):
        c = np.asarray(state.c[i])
        e = np.exp(params.alpha0 * phi - z * state.psi)
        J_u[:n] += w * z * z * c
        J_u[(i + 1) * n:(i + 2) * n] = -w * z * e
        J_phi -= w * z * params.alpha0 * c

    R_uf = R_u[free_all][:, free_all]
    lam = Factorization(R_uf.T.tocsc()).solve(J_u[free_all])
    grad = J_phi - R_phi[free_all].T @ lam
    grad[mesh.dirichlet_vertices()] = 0.0
    return grad


def directional_derivative(load, theta) -> float:
    load = np.asarray(load, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if load.shape != theta.shape:
        raise ValueError(f"shape mismatch {load.shape} vs {theta.shape}")
    return float(load @ theta)
