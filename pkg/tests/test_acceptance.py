"""Acceptance criteria 1-8.

Every criterion records one or more PASS/FAIL lines that are printed in
the terminal summary. Parts that are known not to hold are kept at their
stated tolerance and marked ``xfail(strict=True)``.
"""
import dataclasses
import time
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

import phasecap.pnp as pnp
from conftest import record
from phasecap import fem
from phasecap.adjoint import adjoint_system, discrete_sensitivity, solve_adjoint
from phasecap.checks import equilibrium_check, gradient_check
from phasecap.materials import (PhysicalParams, dielectric, dielectric_derivative,
                                double_well)
from phasecap.mesh import BoundaryTag, generate_annulus_mesh, generate_rectangle_mesh
from phasecap.optimizer import (GradientFlowStepper, OptimParams, initial_phase_field,
                                run_optimization, volume)
from phasecap.pnp import (Discretization, SolverTolerances, continuity_matrix, gummel_solve,
                          poisson_boltzmann_jacobian, poisson_boltzmann_residual,
                          potential_dirichlet, slotboom_dirichlet)

pytestmark = pytest.mark.slow

PHYS = PhysicalParams()
TOLS = SolverTolerances()


# --- 1: adjoint gradient check ---------------------------------------------

def _gradient_criterion(mode):
    mesh = generate_rectangle_mesh(16, 32)
    phi = initial_phase_field(mesh, 4)
    t0 = time.perf_counter()
    res = gradient_check(mesh, phi, PHYS, TOLS, n_directions=5, seed=0,
                         steps=(1e-4, 1e-5, 1e-6), mode=mode)
    elapsed = time.perf_counter() - t0
    worst = max(r.rel_error for r in res)
    return worst, elapsed


def test_c1_gradient_check_discrete():
    worst, elapsed = _gradient_criterion("discrete")
    ok = worst <= 1e-4 and elapsed <= 120
    record(1, "discrete adjoint", ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")
    assert worst <= 1e-4
    assert elapsed <= 120


@pytest.mark.xfail(strict=True, reason="continuous-formula sensitivity is O(h) inconsistent "
                                       "with the discrete objective on a 16x32 mesh")
def test_c1_gradient_check_galerkin():
    worst, elapsed = _gradient_criterion("galerkin")
    record(1, "continuous-formula adjoint", worst <= 1e-4,
           f"max rel err {worst:.2e}, {elapsed:.1f}s", expected_fail=True)
    assert worst <= 1e-4


# --- 2: equilibrium ---------------------------------------------------------

def test_c2_equilibrium():
    mesh = generate_rectangle_mesh(16, 32)
    t0 = time.perf_counter()
    res = equilibrium_check(mesh, PHYS, TOLS)
    elapsed = time.perf_counter() - t0
    ok = res.passed(1e-10, 2) and elapsed <= 5
    record(2, "equilibrium", ok, f"psi {res.psi_error:.1e}, c {max(res.c_errors):.1e}, "
                                 f"{res.sweeps} sweep(s), {elapsed:.2f}s")
    assert res.converged and res.sweeps <= 2
    assert res.psi_error <= 1e-10 and max(res.c_errors) <= 1e-10
    assert elapsed <= 5


# --- 3: maximum principle ----------------------------------------------------

def _random_fields(mesh, n, rng):
    x = mesh.vertices
    lo, hi = x.min(axis=0), x.max(axis=0)
    s = (x - lo) / (hi - lo)
    out = []
    for k in range(n):
        a = rng.normal(size=(4, 4))
        f = sum(a[i, j] * np.cos(i * np.pi * s[:, 0]) * np.cos(j * np.pi * s[:, 1])
                for i in range(4) for j in range(4))
        f = (f - f.min()) / (f.max() - f.min())
        if k % 3 == 1:
            f = (f > 0.5).astype(float)  # sharp two-phase layout
        elif k % 3 == 2:
            f = rng.uniform(size=mesh.n_vertices)  # rough field
        out.append(f)
    return out


def test_c3_maximum_principle(monkeypatch):
    rng = np.random.default_rng(2024)
    cases = [(generate_rectangle_mesh(16, 32), PHYS), (generate_annulus_mesh(12, 96), PHYS)]
    real = pnp.solve_continuity
    seen = []

    def spy(mesh, phi, psi, params, species, disc=None):
        rho = real(mesh, phi, psi, params, species, disc=disc)
        seen.append((rho, slotboom_dirichlet(mesh, params, species)[1]))
        return rho

    monkeypatch.setattr(pnp, "solve_continuity", spy)
    t0 = time.perf_counter()
    worst_lo, worst_hi, n_fields, n_solves = 0.0, 0.0, 0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        for mesh, params in cases:
            for phi in _random_fields(mesh, 10, rng):
                seen.clear()
                st = gummel_solve(mesh, phi, params, TOLS)
                assert st.converged
                n_fields += 1
                for rho, vals in seen:
                    worst_lo = min(worst_lo, float(rho.min()))
                    worst_hi = max(worst_hi, float(rho.max() - vals.max()))
                    n_solves += 1
    elapsed = time.perf_counter() - t0
    ok = worst_lo >= 0 and worst_hi <= 1e-12 and elapsed <= 300 and n_fields >= 20
    record(3, "max principle", ok, f"{n_fields} fields, {n_solves} continuity solves, "
                                   f"min rho {worst_lo:.1e}, max excess {worst_hi:.1e}, "
                                   f"{elapsed:.1f}s")
    assert n_fields >= 20
    assert worst_lo >= 0.0
    assert worst_hi <= 1e-12
    assert elapsed <= 300


# --- 4: discretization order ------------------------------------------------

def _mms_error(n):
    mesh = generate_rectangle_mesh(n, 2 * n)
    x, y = mesh.vertices.T
    pi = np.pi
    phi_f = lambda x, y: 0.5 + 0.4 * np.cos(pi * x) * np.sin(pi * y / 2)  # noqa: E731
    phi = phi_f(x, y)
    # exact solution and its derivatives
    u = np.sin(pi * x) * np.sin(pi * y / 2)
    ux = pi * np.cos(pi * x) * np.sin(pi * y / 2)
    uy = pi / 2 * np.sin(pi * x) * np.cos(pi * y / 2)
    lap = -(pi ** 2 + pi ** 2 / 4) * u
    px = -0.4 * pi * np.sin(pi * x) * np.sin(pi * y / 2)
    py = 0.2 * pi * np.cos(pi * x) * np.cos(pi * y / 2)
    eps = dielectric(phi, PHYS)
    deps = dielectric_derivative(phi, PHYS)
    f = -(eps * lap + deps * (px * ux + py * uy))

    disc = Discretization(mesh, phi, PHYS)
    M = fem.assemble_mass(mesh)
    boundary = np.flatnonzero(mesh.vertex_tags != int(BoundaryTag.INTERIOR))
    uh = fem.solve_linear(fem.LinearSystem(disc.A_eps, M @ f,
                                           {int(v): 0.0 for v in boundary}))
    # edge-midpoint rule, exact for quadratics
    t = mesh.triangles
    area = fem.p1_gradients(mesh)[1]
    err2 = 0.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        mx = 0.5 * (x[t[:, a]] + x[t[:, b]])
        my = 0.5 * (y[t[:, a]] + y[t[:, b]])
        e = 0.5 * (uh[t[:, a]] + uh[t[:, b]]) - np.sin(pi * mx) * np.sin(pi * my / 2)
        err2 += np.sum(area * e ** 2) / 3.0
    return np.sqrt(err2)


def test_c4_discretization_order():
    t0 = time.perf_counter()
    sizes = (8, 16, 32, 64)
    errs = [_mms_error(n) for n in sizes]
    rates = [np.log2(errs[k] / errs[k + 1]) for k in range(len(sizes) - 1)]
    elapsed = time.perf_counter() - t0
    ok = min(rates) >= 1.9 and elapsed <= 60
    record(4, "L2 order", ok, "rates " + ", ".join(f"{r:.3f}" for r in rates)
           + f", {elapsed:.1f}s")
    assert min(rates) >= 1.9
    assert elapsed <= 60


# --- 5 and 6: Example 1 ---------------------------------------------------------

def _run_example1(sign):
    mesh = generate_rectangle_mesh(16, 32)
    opt = OptimParams(outer_iters=2000, state_update_stride=10, sensitivity_sign=sign)
    t0 = time.perf_counter()
    res = run_optimization(mesh, PHYS, opt, TOLS, initial_phase_field(mesh, 4))
    return mesh, opt, res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def example1():
    return _run_example1("descent")


def _interface_layer(mesh, phi):
    """Electrolyte vertices sharing an edge with an electrode vertex."""
    t = mesh.triangles
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    wet = phi > 0.5
    cross = e[wet[e[:, 0]] != wet[e[:, 1]]]
    layer = np.zeros(mesh.n_vertices, dtype=bool)
    layer[cross.ravel()] = True
    layer &= wet
    layer[mesh.dirichlet_vertices()] = False
    return layer


def test_c5_example1(example1):
    mesh, opt, res, elapsed = example1
    vol_err = abs(volume(mesh, res.phi) - opt.v_target)
    factor = res.final_objective / res.initial_objective
    w = fem.lumped_mass(mesh)
    sep = float(w @ double_well(res.phi)) / mesh.area()
    layer = _interface_layer(mesh, res.phi)
    c1 = float(w[layer] @ res.state.c[0][layer] / w[layer].sum())
    c2 = float(w[layer] @ res.state.c[1][layer] / w[layer].sum())
    sign_ok = c1 > PHYS.c_inf and c2 < PHYS.c_inf
    ok = vol_err < 0.01 and factor >= 2 and sep < 0.02 and sign_ok and elapsed <= 900
    record(5, "example 1", ok, f"vol err {vol_err:.4f}, factor {factor:.2f}, "
                               f"omega {sep:.1e}, layer c1 {c1:.3f} c2 {c2:.3f}, "
                               f"{elapsed:.0f}s")
    assert vol_err < 0.01
    assert factor >= 2.0
    assert sep < 0.02
    assert sign_ok and layer.sum() > 0
    assert elapsed <= 900


def _descent_violations(history):
    bad, worst = 0, 0.0
    recs = list(history)
    for prev, cur in zip(recs, recs[1:]):
        if cur.refreshed:
            continue  # new window, new lagged reference
        slack = 1e-8 * max(abs(prev.penalized_energy), 1e-300)
        excess = cur.penalized_energy - prev.penalized_energy
        if excess > slack:
            bad += 1
            worst = max(worst, excess / abs(prev.penalized_energy))
    return bad, worst


def test_c6_energy_descent(example1):
    _, _, res, _ = example1
    bad, worst = _descent_violations(res.history)
    record(6, "descent sign", bad == 0, f"{bad} violations of {len(res.history) - 1} steps")
    assert bad == 0, f"{bad} increases, worst relative {worst:.2e}"


@pytest.mark.xfail(strict=True, reason="printed sensitivity sign is an ascent direction for "
                                       "the objective")
def test_c6_energy_descent_printed_sign():
    _, _, res, _ = _run_example1("printed")
    bad, worst = _descent_violations(res.history)
    record(6, "printed sign", bad == 0, f"{bad} violations, worst relative {worst:.1e}",
           expected_fail=True)
    assert bad == 0


# --- 7: Example 2 ---------------------------------------------------------------

@pytest.fixture(scope="module")
def example2():
    mesh = generate_annulus_mesh(12, 96)
    opt = OptimParams(nu=1e-3, v_target=0.5 * mesh.area(), outer_iters=2000,
                      state_update_stride=10).validate(mesh.area())
    t0 = time.perf_counter()
    res = run_optimization(mesh, PHYS, opt, TOLS, initial_phase_field(mesh, 4))
    return mesh, opt, res, time.perf_counter() - t0


def _petal_components(mesh, phi):
    r = np.hypot(*mesh.vertices.T)
    radii = np.unique(np.round(r, 12))
    band = np.isclose(r, radii[-2]) & (phi > 0.5)  # ring next to the outer circle
    t = mesh.triangles
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e = e[band[e[:, 0]] & band[e[:, 1]]]
    g = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])),
                      shape=(mesh.n_vertices,) * 2)
    _, labels = connected_components(g, directed=False)
    return len(np.unique(labels[band]))


def test_c7_example2_runs_and_petals(example2):
    mesh, opt, res, elapsed = example2
    assert len(res.history) == opt.outer_iters + 1
    assert np.all(np.isfinite(res.phi))
    comps = _petal_components(mesh, res.phi)
    ok = comps >= 2 and elapsed <= 900
    record(7, "completes, petals", ok, f"{comps} components in outer band, "
                                       f"J {res.initial_objective:.3f} -> "
                                       f"{res.final_objective:.3f}, {elapsed:.0f}s")
    assert comps >= 2
    assert elapsed <= 900


@pytest.mark.xfail(strict=True, reason="interface pinning on the 12x96 annulus leaves the "
                                       "volume error above 0.01")
def test_c7_example2_volume(example2):
    mesh, opt, res, _ = example2
    vol_err = abs(volume(mesh, res.phi) - opt.v_target)
    record(7, "volume error", vol_err < 0.01, f"vol err {vol_err:.4f}", expected_fail=True)
    assert vol_err < 0.01


# --- 8: dense oracles -------------------------------------------------------------

def _dense_dirichlet_solve(A, b, idx, vals):
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=float)
    n = A.shape[0]
    free = np.setdiff1d(np.arange(n), idx)
    x = np.zeros(n)
    x[idx] = vals
    x[free] = np.linalg.solve(A[np.ix_(free, free)], b[free] - A[np.ix_(free, idx)] @ vals)
    return x


def test_c8_dense_oracles():
    t0 = time.perf_counter()
    mesh = generate_rectangle_mesh(3, 5)
    assert mesh.n_vertices <= 25
    phi = initial_phase_field(mesh, 2)
    st = gummel_solve(mesh, phi, PHYS, TOLS)
    n = mesh.n_vertices
    dv = mesh.dirichlet_vertices()
    diffs = {}

    # continuity solves
    disc = Discretization(mesh, phi, PHYS)
    for i in range(2):
        idx, vals = slotboom_dirichlet(mesh, PHYS, i)
        sparse = pnp.solve_continuity(mesh, phi, st.psi, PHYS, i, disc=disc)
        dense = _dense_dirichlet_solve(continuity_matrix(disc, st.psi, i), np.zeros(n),
                                       idx, vals)
        diffs[f"continuity {i + 1}"] = np.max(np.abs(sparse - dense))

    # one Newton step of the Poisson-Boltzmann solve from the zero potential
    idx, vals = potential_dirichlet(mesh, PHYS)
    psi0 = np.zeros(n)
    psi0[idx] = vals
    one = dataclasses.replace(TOLS, newton_max_iter=1, newton_damping=1.0)
    J = poisson_boltzmann_jacobian(disc, psi0, st.rho)
    r = poisson_boltzmann_residual(disc, psi0, st.rho)
    free = mesh.free_vertices()
    dense_step = psi0.copy()
    dense_step[free] -= np.linalg.solve(J.toarray()[np.ix_(free, free)], r[free])
    pb = pnp.solve_poisson_boltzmann(mesh, phi, st.rho, PHYS, one, psi0=psi0, disc=disc)
    rn = np.linalg.norm(poisson_boltzmann_residual(disc, dense_step, st.rho)[free])
    if rn < np.linalg.norm(r[free]):  # full step accepted by the line search
        diffs["Poisson-Boltzmann Newton step"] = np.max(np.abs(pb.psi - dense_step))

    # monolithic adjoint
    A, b = adjoint_system(mesh, phi, st, PHYS)
    cidx = np.concatenate([k * n + dv for k in range(3)])
    dense = _dense_dirichlet_solve(A, b, cidx, np.zeros(len(cidx)))
    adj = solve_adjoint(mesh, phi, st, PHYS)
    diffs["adjoint"] = np.max(np.abs(np.concatenate([*adj.s, adj.zeta]) - dense))

    # transposed state Jacobian behind the discrete sensitivity
    R_u, R_phi = pnp.state_jacobians(mesh, phi, st, PHYS)
    free_all = np.concatenate([k * n + free for k in range(3)])
    w = fem.lumped_mass(mesh)
    J_u = np.zeros(3 * n)
    J_phi = np.zeros(n)
    for i, z in enumerate(PHYS.z):
        e = np.exp(PHYS.alpha0 * phi - z * st.psi)
        J_u[:n] += w * z * z * st.c[i]
        J_u[(i + 1) * n:(i + 2) * n] = -w * z * e
        J_phi -= w * z * PHYS.alpha0 * st.c[i]
    lam = np.linalg.solve(R_u.toarray()[np.ix_(free_all, free_all)].T, J_u[free_all])
    grad = J_phi - R_phi.toarray()[free_all].T @ lam
    grad[dv] = 0.0
    diffs["discrete sensitivity"] = np.max(np.abs(discrete_sensitivity(mesh, phi, st, PHYS)
                                                  - grad))

    # gradient-flow step
    opt = OptimParams()
    stepper = GradientFlowStepper(mesh, opt)
    sens = discrete_sensitivity(mesh, phi, st, PHYS)
    rhs = stepper.rhs(phi, sens)
    gi = np.array(sorted(stepper.constrained))
    gv = np.array([stepper.constrained[k] for k in gi])
    dense_phi = np.clip(_dense_dirichlet_solve(stepper.B, rhs, gi, gv), 0, 1)
    diffs["gradient-flow step"] = np.max(np.abs(stepper.step(phi, sens) - dense_phi))

    elapsed = time.perf_counter() - t0
    worst = max(diffs.values())
    record(8, "dense oracles", worst <= 1e-10 and elapsed <= 10,
           f"{len(diffs)} solves, max abs diff {worst:.1e}, {elapsed:.2f}s")
    for name, d in diffs.items():
        assert d <= 1e-10, name
    assert elapsed <= 10
