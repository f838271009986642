"""
P1 finite element primitives on triangle meshes.

All global matrices are assembled in element-index order through COO
triplets and converted to CSR, so repeated assembly is bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriangleMesh


class SolverError(RuntimeError):
    pass


def p1_gradients(mesh: TriangleMesh):
    """Barycentric gradients and areas.

    Returns
    -------
    grads : (nt, 3, 2) array
        ``grads[k, a]`` is the constant gradient of the hat function of local
        vertex ``a`` on triangle ``k``.
    areas : (nt,) array
    """
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    grads = np.empty(p.shape)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        grads[:, a, 0] = (y[:, b] - y[:, c]) / det
        grads[:, a, 1] = (x[:, c] - x[:, b]) / det
    return grads, 0.5 * np.abs(det)


def element_gradient(mesh: TriangleMesh, values: np.ndarray, grads=None) -> np.ndarray:
    """Constant gradient of a P1 field on every element, shape (nt, 2)."""
    if grads is None:
        grads, _ = p1_gradients(mesh)
    return np.einsum("ka,kad->kd", np.asarray(values)[mesh.triangles], grads)


def centroid_values(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    return np.asarray(values)[mesh.triangles].mean(axis=1)


def assemble_local(mesh: TriangleMesh, local: np.ndarray, shape=None) -> sp.csr_matrix:
    """Scatter ``(nt, 3, 3)`` element matrices into a global CSR matrix."""
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape or (n, n))
    return A.tocsr()


def local_stiffness(mesh: TriangleMesh) -> np.ndarray:
    grads, areas = p1_gradients(mesh)
    return areas[:, None, None] * np.einsum("kad,kbd->kab", grads, grads)


def assemble_weighted_stiffness(mesh: TriangleMesh, coeff) -> sp.csr_matrix:
    """Stiffness matrix ``sum_K coeff_K int_K grad(l_a) . grad(l_b)``."""
    coeff = np.asarray(coeff, dtype=float)
    if coeff.ndim == 0:
        coeff = np.full(mesh.n_triangles, float(coeff))
    if coeff.shape != (mesh.n_triangles,):
        raise ValueError(f"coefficient has {coeff.shape[0]} entries, mesh has "
                         f"{mesh.n_triangles} triangles")
    if not np.all(np.isfinite(coeff)):
        raise ValueError("non-finite element coefficient")
    return assemble_local(mesh, coeff[:, None, None] * local_stiffness(mesh))


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh: TriangleMesh) -> sp.csr_matrix:
    areas = mesh.areas()
    return assemble_local(mesh, areas[:, None, None] * _MASS_REF[None])


def lumped_mass(mesh: TriangleMesh) -> np.ndarray:
    """Row sums of the consistent mass matrix, ``int l_a dx``."""
    w = np.zeros(mesh.n_vertices)
    np.add.at(w, mesh.triangles, np.repeat(mesh.areas()[:, None] / 3.0, 3, axis=1))
    return w


def assemble_load(mesh: TriangleMesh, density) -> np.ndarray:
    """Exact load vector ``int density_h l_a dx`` of a P1 density."""
    density = np.asarray(density, dtype=float)
    if density.shape != (mesh.n_vertices,):
        raise ValueError(f"density has shape {density.shape}, expected ({mesh.n_vertices},)")
    return assemble_mass(mesh) @ density


def integrate(mesh: TriangleMesh, values) -> float:
    """Exact integral of a P1 field."""
    return float(lumped_mass(mesh) @ np.asarray(values, dtype=float))


@dataclass
class LinearSystem:
    """Sparse system with Dirichlet constraints.

    ``constrained`` is a sequence of ``(vertex, value)`` pairs or a dict.
    """

    matrix: sp.spmatrix
    rhs: np.ndarray
    constrained: object = field(default_factory=dict)

    def constraint_arrays(self):
        pairs = self.constrained.items() if isinstance(self.constrained, dict) \
            else self.constrained
        seen = {}
        for idx, val in pairs:
            idx = int(idx)
            if idx < 0 or idx >= self.rhs.shape[0]:
                raise ValueError(f"constrained index {idx} out of range")
            if idx in seen and seen[idx] != float(val):
                raise ValueError(f"conflicting Dirichlet values at vertex {idx}: "
                                 f"{seen[idx]} and {float(val)}")
            seen[idx] = float(val)
        idx = np.array(sorted(seen), dtype=np.int64)
        return idx, np.array([seen[i] for i in idx], dtype=float)


def apply_dirichlet(system: LinearSystem) -> LinearSystem:
    """Symmetric elimination of Dirichlet constraints.

    Constrained columns are moved to the right-hand side and constrained
    rows become identity rows carrying the boundary value.
    """
    idx, vals = system.constraint_arrays()
    A = sp.csr_matrix(system.matrix, dtype=float, copy=True)
    b = np.array(system.rhs, dtype=float, copy=True)
    n = A.shape[0]
    if idx.size == 0:
        return LinearSystem(A, b, {})
    g = np.zeros(n)
    g[idx] = vals
    b -= A @ g
    keep = np.ones(n)
    keep[idx] = 0.0
    D = sp.diags(keep)
    A = (D @ A @ D).tocsr()
    A = A + sp.diags(1.0 - keep)
    A.eliminate_zeros()
    b[idx] = vals
    return LinearSystem(A.tocsr(), b, dict(zip(idx.tolist(), vals.tolist())))


class Factorization:
    """Sparse LU with a singularity check on the pivots."""

    def __init__(self, matrix, pivot_tol: float = 1e-13):
        A = sp.csc_matrix(matrix, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise SolverError(f"matrix is not square: {A.shape}")
        try:
            self.lu = spla.splu(A, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from None
        diag = np.abs(self.lu.U.diagonal())
        scale = max(float(np.abs(A).max()), np.finfo(float).tiny) if A.nnz else 1.0
        k = int(np.argmin(diag)) if diag.size else 0
        if diag.size and diag[k] <= pivot_tol * scale:
            col = int(self.lu.perm_c[k])
            raise SolverError(f"matrix is numerically singular: pivot {k} "
                              f"(column {col}) has magnitude {diag[k]:.3e}")
        self.matrix = A

    def solve(self, b):
        return self.lu.solve(np.asarray(b, dtype=float))


def solve_linear(system: LinearSystem, rtol: float = 1e-10) -> np.ndarray:
    """Solve a (constrained) system by sparse LU.

    Raises ``SolverError`` for singular matrices or when the relative
    residual exceeds ``rtol``.
    """
    if system.constrained:
        system = apply_dirichlet(system)
    fac = Factorization(system.matrix)
    x = fac.solve(system.rhs)
    r = system.matrix @ x - system.rhs
    bnorm = np.linalg.norm(system.rhs)
    res = np.linalg.norm(r) / bnorm if bnorm > 0 else np.linalg.norm(r)
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"linear solve residual {res:.3e} exceeds {rtol:.1e}")
    return x


# --- inverse averaging ---------------------------------------------------

def _collapsed_gauss(n: int):
    """Duffy-collapsed Gauss-Legendre rule on the reference triangle.

    Returns barycentric coordinates (nq, 3) and weights summing to 1.
    """
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(g, g, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    s = U.ravel()
    t = (1.0 - U).ravel() * V.ravel()
    wt = (WU * WV).ravel() * (1.0 - U.ravel()) * 2.0
    bary = np.column_stack([1.0 - s - t, s, t])
    return bary, wt


_QUAD_LOW = _collapsed_gauss(7)
_QUAD_HIGH = _collapsed_gauss(12)
_SPREAD_SWITCH = 0.05


def _mean_exp_quadrature(v: np.ndarray, rule=_QUAD_HIGH) -> np.ndarray:
    bary, wt = rule
    return np.exp(v @ bary.T) @ wt


def _mean_exp_closed(v: np.ndarray) -> np.ndarray:
    """Mean of exp over a triangle for linear exponent with vertex values v <= 0.

    Uses the second divided difference of exp: mean = 2 exp[v0, v1, v2].
    Only called when the spread is large enough to avoid cancellation.
    """
    v = np.sort(v, axis=1)
    a, b, c = v[:, 0], v[:, 1], v[:, 2]

    def dd1(x, y):
        d = y - x
        safe = np.where(d == 0.0, 1.0, d)
        return np.where(d == 0.0, np.exp(x), np.exp(x) * np.expm1(d) / safe)

    return 2.0 * (dd1(b, c) - dd1(a, b)) / (c - a)


def mean_exp(v: np.ndarray) -> np.ndarray:
    """Element mean of ``exp(v_h)`` for P1 ``v_h`` with vertex values ``v``.

    Values are assumed pre-shifted so ``max(v) == 0`` on every row.
    """
    spread = v.max(axis=1) - v.min(axis=1)
    out = np.empty(v.shape[0])
    small = spread < _SPREAD_SWITCH
    if small.any():
        out[small] = _mean_exp_quadrature(v[small], _QUAD_LOW)
    if (~small).any():
        out[~small] = _mean_exp_closed(v[~small])
    return out


def elementwise_inverse_average(mesh: TriangleMesh, exponent) -> np.ndarray:
    """Inverse average ``E_K = (|K|^-1 int_K exp(-u_h))^-1`` per element.

    ``u_h`` is the P1 interpolant of the nodal ``exponent``. The
    exponential is evaluated shifted by the element maximum of ``-u`` so
    no intermediate overflows.
    """
    u = np.asarray(exponent, dtype=float)[mesh.triangles]
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite exponent")
    umin = u.min(axis=1)
    # exp(-u) = exp(-umin) * exp(-(u - umin)), with -(u - umin) <= 0
    return np.exp(umin) / mean_exp(-(u - umin[:, None]))


def inverse_average_with_derivative(mesh: TriangleMesh, exponent):
    """Inverse average and its derivative with respect to the nodal exponent.

    Returns
    -------
    E : (nt,) array
    dE : (nt, 3) array
        ``dE[k, a] = dE_k / du_a`` for local vertex ``a``; equal to
        ``E_k**2 * mean_K(exp(-u) l_a)``.
    """
    u = np.asarray(exponent, dtype=float)[mesh.triangles]
    umin = u.min(axis=1)
    v = -(u - umin[:, None])
    E = np.exp(umin) / mean_exp(v)
    bary, wt = _QUAD_HIGH
    f = np.exp(v @ bary.T) * wt  # (nt, nq), scaled by exp(umin)
    weighted = f @ bary  # mean_K(exp(v) l_a) (shifted)
    # E^2 * mean(exp(-u) l_a) = E^2 * exp(-umin) * weighted
    dE = (E * E * np.exp(-umin))[:, None] * weighted
    return E, dE
