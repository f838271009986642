"""
Steady modified Poisson--Nernst--Planck solver in Slotboom variables.

The discrete state is ``(psi, rho_1, rho_2)`` on the vertices. Continuity
equations use the inverse-averaged coefficient ``D_K E_K`` on every element,
the Poisson source uses the same inverse averages with a lumped mass, and
the coupled system is solved by Gummel sweeps with a Newton solve for the
potential inside each sweep.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import Factorization
from .materials import (PhysicalParams, dielectric, dielectric_derivative, diffusion,
                        diffusion_derivative, double_well)
from .mesh import BoundaryTag, TriangleMesh

logger = logging.getLogger(__name__)

EXP_LIMIT = 700.0


@dataclass(frozen=True)
class SolverTolerances:
    gummel_tol: float = 1e-8
    gummel_max_iter: int = 200
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    newton_damping: float = 1.0

    def validate(self):
        if not (self.gummel_tol > 0 and self.newton_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.gummel_max_iter < 1 or self.newton_max_iter < 1:
            raise ValueError("iteration limits must be >= 1")
        if not (0.0 < self.newton_damping <= 1.0):
            raise ValueError(f"newton_damping must be in (0, 1], got {self.newton_damping}")
        return self


@dataclass
class StateSolution:
    psi: np.ndarray
    rho: tuple
    c: tuple
    gummel_iterations: int = 0
    converged: bool = True
    residual: float = 0.0
    changes: list = field(default_factory=list)


# --- Slotboom transform ----------------------------------------------------

def _checked_exp(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > EXP_LIMIT):
        raise OverflowError(f"Slotboom exponent {float(np.max(np.abs(x))):.1f} "
                            f"exceeds {EXP_LIMIT}")
    return np.exp(x)


def slotboom_forward(c, psi, phi, z, alpha0):
    """rho = c exp(z psi - alpha0 phi)."""
    return np.asarray(c) * _checked_exp(z * np.asarray(psi) - alpha0 * np.asarray(phi))


def slotboom_inverse(rho, psi, phi, z, alpha0):
    """c = rho exp(-z psi + alpha0 phi)."""
    return np.asarray(rho) * _checked_exp(-z * np.asarray(psi) + alpha0 * np.asarray(phi))


# --- boundary data --------------------------------------------------------

def potential_dirichlet(mesh: TriangleMesh, params: PhysicalParams):
    tags = mesh.vertex_tags
    idx = mesh.dirichlet_vertices()
    vals = np.where(tags[idx] == BoundaryTag.GAMMA_IN, params.g_gammain, params.g_gamma2)
    return idx, vals.astype(float)


def slotboom_dirichlet(mesh: TriangleMesh, params: PhysicalParams, species: int):
    """Boundary Slotboom data ``c_inf exp(z g - alpha0)``.

    On the reservoir (``g = 0``) this is ``c_inf exp(-alpha0)``; with the
    default zero electrode concentration the Gamma_2 value is zero.
    """
    z = params.z[species]
    idx = mesh.dirichlet_vertices()
    on_in = mesh.vertex_tags[idx] == BoundaryTag.GAMMA_IN
    vin = params.c_inf * np.exp(z * params.g_gammain - params.alpha0)
    v2 = params.c_inf_gamma2 * np.exp(z * params.g_gamma2 - params.alpha0)
    return idx, np.where(on_in, vin, v2).astype(float)


# --- discretization -------------------------------------------------------

class Discretization:
    """Element data that depend only on the mesh and the phase field."""

    def __init__(self, mesh: TriangleMesh, phi, params: PhysicalParams):
        self.mesh = mesh
        self.params = params
        self.phi = np.asarray(phi, dtype=float)
        if self.phi.shape != (mesh.n_vertices,):
            raise ValueError("phase field does not match the mesh")
        self.grads, self.areas = fem.p1_gradients(mesh)
        self.S = self.areas[:, None, None] * np.einsum("kad,kbd->kab", self.grads, self.grads)
        phic = fem.centroid_values(mesh, self.phi)
        self.phic = phic
        self.D = diffusion(phic, params)
        self.eps = dielectric(phic, params)
        self.dD = diffusion_derivative(phic, params)
        self.deps = dielectric_derivative(phic, params)
        self.A_eps = fem.assemble_local(mesh, self.eps[:, None, None] * self.S)
        self.weights = fem.lumped_mass(mesh)
        self.dirichlet = mesh.dirichlet_vertices()
        self.free = mesh.free_vertices()

    def exponent(self, psi, species):
        z = self.params.z[species]
        return self.params.alpha0 * self.phi - z * np.asarray(psi)

    def inverse_average(self, psi, species, derivative=False):
        u = self.exponent(psi, species)
        if derivative:
            return fem.inverse_average_with_derivative(self.mesh, u)
        return fem.elementwise_inverse_average(self.mesh, u)

    def lumped_source_weights(self, E):
        """``sum_{K ni a} E_K |K| / 3`` for every vertex."""
        w = np.zeros(self.mesh.n_vertices)
        np.add.at(w, self.mesh.triangles, np.repeat((E * self.areas / 3.0)[:, None], 3, axis=1))
        return w


def _restrict(A, rows, cols):
    return sp.csr_matrix(A)[rows][:, cols]


# --- Poisson-Boltzmann ----------------------------------------------------

@dataclass
class PoissonBoltzmannResult:
    psi: np.ndarray
    converged: bool
    residuals: list


def poisson_boltzmann_residual(disc: Discretization, psi, rho):
    r = disc.A_eps @ psi
    for i, z in enumerate(disc.params.z):
        E = disc.inverse_average(psi, i)
        r -= z * rho[i] * disc.lumped_source_weights(E)
    return r


def poisson_boltzmann_jacobian(disc: Discretization, psi, rho):
    J = disc.A_eps.copy()
    third = disc.areas / 3.0
    for i, z in enumerate(disc.params.z):
        _, dE = disc.inverse_average(psi, i, derivative=True)
        # d/dpsi_b of -z rho_a E_K |K|/3 is z^2 rho_a dE_K/du_b |K|/3
        local = np.repeat((third[:, None] * dE)[:, None, :], 3, axis=1)
        G = fem.assemble_local(disc.mesh, local)
        J = J + z * z * (sp.diags(rho[i]) @ G)
    return J.tocsr()


def solve_poisson_boltzmann(mesh: TriangleMesh, phi, rho, params: PhysicalParams,
                            tol: SolverTolerances = SolverTolerances(), psi0=None,
                            disc: Discretization | None = None) -> PoissonBoltzmannResult:
    """Newton solve of the inverse-averaged Poisson-Boltzmann equation.

    The Jacobian includes the derivative of the inverse averages, and every
    Newton step is damped by residual halving (at most 20 halvings).
    """
    disc = disc or Discretization(mesh, phi, params)
    rho = [np.asarray(r, dtype=float) for r in rho]
    idx, vals = potential_dirichlet(mesh, params)
    psi = np.zeros(mesh.n_vertices) if psi0 is None else np.array(psi0, dtype=float)
    psi[idx] = vals
    free = disc.free

    r = poisson_boltzmann_residual(disc, psi, rho)
    rnorm = np.linalg.norm(r[free])
    residuals = [rnorm]
    converged = rnorm <= tol.newton_tol
    for _ in range(tol.newton_max_iter):
        if converged:
            break
        J = poisson_boltzmann_jacobian(disc, psi, rho)
        delta = Factorization(_restrict(J, free, free)).solve(-r[free])
        step = tol.newton_damping
        for _ in range(21):
            trial = psi.copy()
            trial[free] += step * delta
            r_trial = poisson_boltzmann_residual(disc, trial, rho)
            tnorm = np.linalg.norm(r_trial[free])
            if tnorm < rnorm:
                break
            step *= 0.5
        else:
            logger.warning("Poisson-Boltzmann line search stalled at residual %.3e", rnorm)
            break
        psi, r, rnorm = trial, r_trial, tnorm
        residuals.append(rnorm)
        converged = rnorm <= tol.newton_tol
    if not converged:
        logger.warning("Poisson-Boltzmann Newton did not converge: residual %.3e", rnorm)
    return PoissonBoltzmannResult(psi, bool(converged), residuals)


# --- continuity -----------------------------------------------------------

def continuity_matrix(disc: Discretization, psi, species: int):
    E = disc.inverse_average(psi, species)
    return fem.assemble_local(disc.mesh, (disc.D * E)[:, None, None] * disc.S)


def solve_continuity(mesh: TriangleMesh, phi, psi, params: PhysicalParams, species: int,
                     disc: Discretization | None = None) -> np.ndarray:
    """Linear inverse-averaged continuity solve for one Slotboom variable.

    A discrete maximum principle violation (possible on obtuse meshes) is
    reported as a ``RuntimeWarning`` naming the offending vertex.
    """
    disc = disc or Discretization(mesh, phi, params)
    A = continuity_matrix(disc, psi, species)
    idx, vals = slotboom_dirichlet(mesh, params, species)
    rho = fem.solve_linear(fem.LinearSystem(A, np.zeros(mesh.n_vertices),
                                            dict(zip(idx.tolist(), vals.tolist()))))
    hi = float(vals.max()) if vals.size else 0.0
    lo = min(0.0, float(vals.min())) if vals.size else 0.0
    slack = 1e-12 * max(hi, 1.0)
    bad = np.flatnonzero((rho < lo - slack) | (rho > hi + slack))
    if bad.size:
        k = bad[np.argmax(np.maximum(lo - rho[bad], rho[bad] - hi))]
        warnings.warn(f"maximum principle violated for species {species} at vertex {k}: "
                      f"rho = {rho[k]:.3e} outside [{lo:.3e}, {hi:.3e}]", RuntimeWarning)
    return rho


# --- Gummel ---------------------------------------------------------------

def initial_potential(disc: Discretization):
    """Dielectric Laplace solve with the potential boundary data."""
    idx, vals = potential_dirichlet(disc.mesh, disc.params)
    return fem.solve_linear(fem.LinearSystem(disc.A_eps, np.zeros(disc.mesh.n_vertices),
                                             dict(zip(idx.tolist(), vals.tolist()))))


def gummel_solve(mesh: TriangleMesh, phi, params: PhysicalParams,
                 tol: SolverTolerances = SolverTolerances(),
                 warm_start: StateSolution | None = None) -> StateSolution:
    """Gummel fixed-point iteration for the coupled state.

    Each sweep solves both continuity equations for the current potential
    and then the Poisson-Boltzmann equation for the new Slotboom
    variables. Iteration stops once the sup-norm change of the potential
    drops below ``tol.gummel_tol``.
    """
    disc = Discretization(mesh, phi, params)
    psi = initial_potential(disc) if warm_start is None else np.array(warm_start.psi, dtype=float)
    idx, vals = potential_dirichlet(mesh, params)
    psi[idx] = vals
    changes = []
    converged = False
    pb = None
    rho = None
    for sweep in range(1, tol.gummel_max_iter + 1):
        rho = tuple(solve_continuity(mesh, phi, psi, params, i, disc=disc)
                    for i in range(len(params.z)))
        pb = solve_poisson_boltzmann(mesh, phi, rho, params, tol, psi0=psi, disc=disc)
        change = float(np.max(np.abs(pb.psi - psi)))
        psi = pb.psi
        changes.append(change)
        if change <= tol.gummel_tol:
            converged = True
            break
    if converged:
        # continuity solves consistent with the final potential
        rho = tuple(solve_continuity(mesh, phi, psi, params, i, disc=disc)
                    for i in range(len(params.z)))
    else:
        logger.warning("Gummel iteration did not converge in %d sweeps (last change %.3e)",
                       tol.gummel_max_iter, changes[-1])
    c = tuple(slotboom_inverse(rho[i], psi, phi, z, params.alpha0)
              for i, z in enumerate(params.z))
    residual = float(np.linalg.norm(poisson_boltzmann_residual(disc, psi, rho)[disc.free]))
    return StateSolution(psi=psi, rho=rho, c=c, gummel_iterations=sweep,
                         converged=converged and pb.converged, residual=residual,
                         changes=changes)


# --- objective and energies ----------------------------------------------

def objective(mesh: TriangleMesh, c, z=(1, -1)) -> float:
    """Negative net charge ``-int sum_i z_i c_i``, exact for P1 fields."""
    w = fem.lumped_mass(mesh)
    return -float(sum(zi * (w @ np.asarray(ci, dtype=float)) for zi, ci in zip(z, c)))


def ginzburg_landau(mesh: TriangleMesh, phi, kappa: float, stiffness=None, weights=None) -> float:
    """``int kappa/2 |grad phi|^2 + omega(phi)/kappa``; omega by vertex quadrature."""
    phi = np.asarray(phi, dtype=float)
    A = fem.assemble_weighted_stiffness(mesh, 1.0) if stiffness is None else stiffness
    w = fem.lumped_mass(mesh) if weights is None else weights
    return float(0.5 * kappa * phi @ (A @ phi) + (w @ double_well(phi)) / kappa)


def total_energy(mesh: TriangleMesh, phi, c, optim, z=(1, -1)):
    """Return ``(W, W_hat)``: free energy and its volume-penalized version."""
    from .optimizer import volume

    W = ginzburg_landau(mesh, phi, optim.kappa) + objective(mesh, c, z)
    W_hat = W + 0.5 * optim.beta * (volume(mesh, phi) - optim.v_target) ** 2
    return W, W_hat


def linf_bounds(mesh: TriangleMesh, params: PhysicalParams):
    """A priori bounds on the Slotboom variables and the potential.

    ``U`` is the largest ``|log rho_inf|`` over positive boundary values;
    zero boundary data only contribute the lower bound 0.
    """
    rho_hi, logs = 0.0, [0.0]
    for i in range(len(params.z)):
        _, vals = slotboom_dirichlet(mesh, params, i)
        rho_hi = max(rho_hi, float(vals.max()))
        pos = vals[vals > 0]
        logs.extend(np.abs(np.log(pos)).tolist())
    U = max(logs)
    _, g = potential_dirichlet(mesh, params)
    return {"rho": (0.0, rho_hi), "psi": (min(float(g.min()), -U), max(float(g.max()), U))}


def check_linf_bounds(mesh: TriangleMesh, state: StateSolution, params: PhysicalParams,
                      slack: float = 1e-10) -> list:
    """List of violated bounds (empty when the state is within them)."""
    b = linf_bounds(mesh, params)
    out = []
    for i, r in enumerate(state.rho):
        if r.min() < b["rho"][0] - slack or r.max() > b["rho"][1] + slack:
            out.append(f"rho_{i + 1} in [{r.min():.3e}, {r.max():.3e}] outside {b['rho']}")
    lo, hi = b["psi"]
    if state.psi.min() < lo - slack or state.psi.max() > hi + slack:
        out.append(f"psi in [{state.psi.min():.3e}, {state.psi.max():.3e}] outside {b['psi']}")
    return out


# --- full state Jacobian (used by the discrete adjoint) -----------------

def state_jacobians(mesh: TriangleMesh, phi, state: StateSolution, params: PhysicalParams):
    """Jacobians of the discrete state residual.

    Unknowns are ordered ``[psi, rho_1, rho_2]``. Returns ``(R_u, R_phi)``
    with ``R_u`` of shape (3n, 3n) and ``R_phi`` of shape (3n, n); rows of
    Dirichlet vertices are included and must be dropped by the caller.
    """
    disc = Discretization(mesh, phi, params)
    n = mesh.n_vertices
    t = mesh.triangles
    nt = mesh.n_triangles
    alpha0 = params.alpha0
    third = disc.areas / 3.0
    psi = state.psi
    psi_loc = psi[t]
    S = disc.S

    rows_u, cols_u, vals_u = [], [], []
    rows_p, cols_p, vals_p = [], [], []

    def add(rows, cols, vals, roff, coff, local):
        rows.append((np.repeat(t, 3, axis=1) + roff).ravel())
        cols.append((np.tile(t, (1, 3)) + coff).ravel())
        vals.append(local.ravel())

    # Poisson rows
    add(rows_u, cols_u, vals_u, 0, 0, disc.eps[:, None, None] * S)
    Spsi = np.einsum("kab,kb->ka", S, psi_loc)
    add(rows_p, cols_p, vals_p, 0, 0,
        (disc.deps / 3.0)[:, None, None] * Spsi[:, :, None] * np.ones((1, 1, 3)))
    for i, z in enumerate(params.z):
        rho = np.asarray(state.rho[i])
        rho_loc = rho[t]
        E, dE = disc.inverse_average(psi, i, derivative=True)
        off = (i + 1) * n
        # Poisson source: -z E_K |K|/3 rho_a
        add(rows_u, cols_u, vals_u, 0, 0,
            z * z * third[:, None, None] * rho_loc[:, :, None] * dE[:, None, :])
        diag_local = np.zeros((nt, 3, 3))
        idx3 = np.arange(3)
        diag_local[:, idx3, idx3] = (-z * E * third)[:, None]
        add(rows_u, cols_u, vals_u, 0, off, diag_local)
        add(rows_p, cols_p, vals_p, 0, 0,
            -z * alpha0 * third[:, None, None] * rho_loc[:, :, None] * dE[:, None, :])

        # continuity rows
        g = np.einsum("kab,kb->ka", S, rho_loc)
        add(rows_u, cols_u, vals_u, off, off, (disc.D * E)[:, None, None] * S)
        add(rows_u, cols_u, vals_u, off, 0,
            -z * disc.D[:, None, None] * g[:, :, None] * dE[:, None, :])
        add(rows_p, cols_p, vals_p, off, 0,
            (disc.dD * E / 3.0)[:, None, None] * g[:, :, None] * np.ones((1, 1, 3))
            + alpha0 * disc.D[:, None, None] * g[:, :, None] * dE[:, None, :])

    m = len(params.z) + 1
    R_u = sp.coo_matrix((np.concatenate(vals_u), (np.concatenate(rows_u), np.concatenate(cols_u))),
                        shape=(m * n, m * n)).tocsr()
    R_phi = sp.coo_matrix((np.concatenate(vals_p), (np.concatenate(rows_p), np.concatenate(cols_p))),
                          shape=(m * n, n)).tocsr()
    return R_u, R_phi
