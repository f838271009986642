"""
Projected, stabilized semi-implicit Allen--Cahn gradient flow for the
penalized free energy, and the outer optimization loop.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem
from .adjoint import assemble_sensitivity, discrete_sensitivity, solve_adjoint
from .fem import Factorization, SolverError
from .materials import PhysicalParams, clamp01, double_well_derivative
from .mesh import BoundaryTag, TriangleMesh
from .pnp import SolverTolerances, StateSolution, ginzburg_landau, gummel_solve, objective

logger = logging.getLogger(__name__)

SENSITIVITY_SIGNS = {"descent": 1.0, "printed": -1.0}
ADJOINT_MODES = ("discrete", "galerkin")


@dataclass(frozen=True)
class OptimParams:
    """Gradient-flow constants; defaults reproduce the rectangle example."""

    kappa: float = 1e-3
    beta: float = 500.0
    nu: float = 2e-4
    lambda1: float = 1.0
    lambda2: float = 1e-2
    v_target: float = 1.0
    outer_iters: int = 2000
    state_update_stride: int = 10
    projection_enabled: bool = True
    sensitivity_sign: str = "descent"
    adjoint: str = "discrete"
    early_stop: bool = False
    # diagonal mass in the step matrix keeps projection onto [0, 1] energy-stable
    lumped_mass: bool = True

    def validate(self, domain_area: float | None = None):
        errors = []
        for name in ("kappa", "beta", "nu", "lambda1", "lambda2"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.v_target > 0 or (domain_area is not None and not self.v_target < domain_area):
            errors.append(f"v_target must lie in (0, |domain|), got {self.v_target}")
        if self.outer_iters < 0:
            errors.append(f"outer_iters must be >= 0, got {self.outer_iters}")
        if self.state_update_stride < 1:
            errors.append(f"state_update_stride must be >= 1, got {self.state_update_stride}")
        if self.sensitivity_sign not in SENSITIVITY_SIGNS:
            errors.append(f"sensitivity_sign must be one of {sorted(SENSITIVITY_SIGNS)}")
        if self.adjoint not in ADJOINT_MODES:
            errors.append(f"adjoint must be one of {ADJOINT_MODES}")
        if errors:
            raise ValueError("; ".join(errors))
        return self


@dataclass
class HistoryRecord:
    iter: int
    objective: float
    energy: float
    penalized_energy: float
    volume: float
    volume_error: float
    gummel_iters: int
    wall_time_s: float
    refreshed: bool = False


@dataclass
class OptimizationHistory:
    records: list = field(default_factory=list)

    def append(self, rec: HistoryRecord):
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("history iterations must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


@dataclass
class OptimizationResult:
    phi: np.ndarray
    state: StateSolution
    history: OptimizationHistory
    initial_objective: float
    final_objective: float
    factorizations: int = 1


def volume(mesh: TriangleMesh, phi) -> float:
    """Electrolyte volume: exact integral of the vertex-clamped field."""
    return float(fem.lumped_mass(mesh) @ clamp01(np.asarray(phi, dtype=float)))


def initial_phase_field(mesh: TriangleMesh, m: int) -> np.ndarray:
    """``0.5 + 0.5 cos(m pi x1) cos(m pi x2)`` with the phase Dirichlet values."""
    if int(m) < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    x = mesh.vertices
    phi = 0.5 + 0.5 * np.cos(m * np.pi * x[:, 0]) * np.cos(m * np.pi * x[:, 1])
    return apply_phase_dirichlet(mesh, phi)


def apply_phase_dirichlet(mesh: TriangleMesh, phi) -> np.ndarray:
    phi = np.array(phi, dtype=float)
    phi[mesh.vertices_with_tag(BoundaryTag.GAMMA_IN)] = 1.0
    phi[mesh.vertices_with_tag(BoundaryTag.GAMMA_TWO)] = 0.0
    return phi


def project_field(phi) -> np.ndarray:
    return clamp01(np.asarray(phi, dtype=float))


class GradientFlowStepper:
    """Factorized linear system of the stabilized semi-implicit step.

    The step solves

        [(1/nu + L1) M + (kappa + L2) A] phi+ = (1/nu + L1) M phi + L2 A phi + b(phi)

    with ``b`` collecting the explicit double-well, volume and sensitivity
    forcing. ``M`` is the lumped mass unless ``params.lumped_mass`` is off.
    The matrix is factorized once.
    """

    def __init__(self, mesh: TriangleMesh, params: OptimParams, dirichlet: bool = True,
                 scale: float = 1.0):
        # ``scale`` multiplies every assembled operator, including the unit load
        self.mesh = mesh
        self.params = params
        self.weights = scale * fem.lumped_mass(mesh)
        if params.lumped_mass:
            self.M = sp.diags(self.weights).tocsr()
        else:
            self.M = scale * fem.assemble_mass(mesh)
        self.A = scale * fem.assemble_weighted_stiffness(mesh, 1.0)
        self.mass_coef = 1.0 / params.nu + params.lambda1
        B = self.mass_coef * self.M + (params.kappa + params.lambda2) * self.A
        if dirichlet:
            idx_in = mesh.vertices_with_tag(BoundaryTag.GAMMA_IN)
            idx_2 = mesh.vertices_with_tag(BoundaryTag.GAMMA_TWO)
            self.constrained = {**{int(i): 1.0 for i in idx_in}, **{int(i): 0.0 for i in idx_2}}
        else:
            self.constrained = {}
        self.B = B.tocsr()
        reduced = fem.apply_dirichlet(fem.LinearSystem(self.B, np.zeros(mesh.n_vertices),
                                                       self.constrained))
        self.factorization = Factorization(reduced.matrix)
        self.factorizations = 1
        self.sign = SENSITIVITY_SIGNS[params.sensitivity_sign]

    def forcing(self, phi, sens):
        p = self.params
        w = self.weights
        vol_err = float(w @ clamp01(phi)) - p.v_target
        return (-(w * double_well_derivative(phi)) / p.kappa
                - p.beta * vol_err * w
                - self.sign * np.asarray(sens, dtype=float))

    def rhs(self, phi, sens):
        return (self.mass_coef * (self.M @ phi) + self.params.lambda2 * (self.A @ phi)
                + self.forcing(phi, sens))

    def step(self, phi, sens, project: bool | None = None) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        system = fem.apply_dirichlet(fem.LinearSystem(self.B, self.rhs(phi, sens),
                                                      self.constrained))
        new = self.factorization.solve(system.rhs)
        if not np.all(np.isfinite(new)):
            raise SolverError("non-finite phase field after gradient-flow step")
        if self.params.projection_enabled if project is None else project:
            new = project_field(new)
        return new


def gradient_flow_step(mesh: TriangleMesh, phi_n, sens, params: OptimParams,
                       stepper: GradientFlowStepper | None = None) -> np.ndarray:
    """One projected stabilized step of the Allen-Cahn flow.

    ``sens`` is the nodal derivative of the objective; it enters with the
    descent sign unless ``params.sensitivity_sign == "printed"``.
    """
    stepper = stepper or GradientFlowStepper(mesh, params)
    return stepper.step(phi_n, sens)


def lagged_energy(mesh: TriangleMesh, phi, params: OptimParams, objective_ref: float,
                  sens, phi_ref, stiffness=None, weights=None):
    """Penalized energy with the objective linearized at ``phi_ref``.

    Returns ``(objective, W, W_hat)``.
    """
    phi = np.asarray(phi, dtype=float)
    w = fem.lumped_mass(mesh) if weights is None else weights
    J = objective_ref + float(np.asarray(sens) @ (phi - phi_ref))
    W = ginzburg_landau(mesh, phi, params.kappa, stiffness, w) + J
    V = float(w @ clamp01(phi))
    return J, W, W + 0.5 * params.beta * (V - params.v_target) ** 2


def compute_sensitivity(mesh, phi, state, phys: PhysicalParams, mode: str = "discrete"):
    if mode == "discrete":
        return discrete_sensitivity(mesh, phi, state, phys)
    if mode == "galerkin":
        adj = solve_adjoint(mesh, phi, state, phys)
        return assemble_sensitivity(mesh, phi, state, adj, phys)
    raise ValueError(f"unknown adjoint mode {mode!r}")


def solve_state(mesh, phi, phys, tols, warm_start=None) -> StateSolution:
    """Gummel solve with one cold-start retry; raises if both fail."""
    state = gummel_solve(mesh, phi, phys, tols, warm_start=warm_start)
    if not state.converged and warm_start is not None:
        logger.warning("warm-started Gummel solve failed, retrying from a cold start")
        state = gummel_solve(mesh, phi, phys, tols)
    if not state.converged:
        raise SolverError(f"Gummel iteration failed to converge "
                          f"(last change {state.changes[-1]:.3e})")
    return state


def run_optimization(mesh: TriangleMesh, phys: PhysicalParams, opt: OptimParams,
                     tols: SolverTolerances, phi0, callback=None) -> OptimizationResult:
    """Outer loop: state, adjoint and sensitivity every ``state_update_stride``
    steps, a gradient-flow step every iteration.

    ``callback(n, phi, state)`` is invoked after every recorded iteration.
    """
    opt.validate(mesh.area())
    phi = project_field(apply_phase_dirichlet(mesh, phi0))
    stepper = GradientFlowStepper(mesh, opt)
    A, w = stepper.A, stepper.weights
    history = OptimizationHistory()
    t0 = time.perf_counter()
    state = None
    sens = phi_ref = None
    J_ref = J_initial = None
    quiet_steps = 0
    n = 0
    for n in range(opt.outer_iters + 1):
        refreshed = n % opt.state_update_stride == 0
        if refreshed:
            state = solve_state(mesh, phi, phys, tols, warm_start=state)
            sens = compute_sensitivity(mesh, phi, state, phys, opt.adjoint)
            phi_ref = phi.copy()
            J_ref = objective(mesh, state.c, phys.z)
            if J_initial is None:
                J_initial = J_ref
        J, W, W_hat = lagged_energy(mesh, phi, opt, J_ref, sens, phi_ref, A, w)
        V = float(w @ clamp01(phi))
        history.append(HistoryRecord(
            iter=n, objective=J, energy=W, penalized_energy=W_hat, volume=V,
            volume_error=abs(V - opt.v_target),
            gummel_iters=state.gummel_iterations if refreshed else 0,
            wall_time_s=time.perf_counter() - t0, refreshed=refreshed))
        if callback is not None:
            callback(n, phi, state)
        if n == opt.outer_iters:
            break
        new = stepper.step(phi, sens)
        if not np.all(np.isfinite(new)):
            raise SolverError(f"NaN in phase field at iteration {n}")
        quiet_steps = quiet_steps + 1 if np.max(np.abs(new - phi)) < 1e-9 else 0
        phi = new
        if opt.early_stop and quiet_steps >= 20:
            logger.info("phase field stationary, stopping at iteration %d", n + 1)
            break

    last = history[-1]
    if not last.refreshed or last.iter != n:
        state = solve_state(mesh, phi, phys, tols, warm_start=state)
    return OptimizationResult(phi=phi, state=state, history=history,
                              initial_objective=J_initial,
                              final_objective=objective(mesh, state.c, phys.z),
                              factorizations=stepper.factorizations)
