"""
Structured triangle meshes for the rectangular and annular design domains.

Boundary edges carry one of three tags. ``GAMMA_IN`` is the ionic reservoir
(electrolyte side), ``GAMMA_TWO`` the driven electrode and ``GAMMA_ONE`` the
insulating remainder of the boundary (zero normal flux).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class BoundaryTag(enum.IntEnum):
    INTERIOR = 0
    GAMMA_IN = 1
    GAMMA_ONE = 2
    GAMMA_TWO = 3


DIRICHLET_TAGS = (BoundaryTag.GAMMA_IN, BoundaryTag.GAMMA_TWO)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    """Conforming 2D triangulation with tagged boundary edges.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : (nb, 2) int array
    edge_tags : (nb,) int array of ``BoundaryTag`` values
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    vertex_tags: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "edge_tags"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "vertex_tags", _vertex_tags(self))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    def area(self) -> float:
        return float(self.areas().sum())

    def vertices_with_tag(self, *tags) -> np.ndarray:
        return np.flatnonzero(np.isin(self.vertex_tags, [int(t) for t in tags]))

    def dirichlet_vertices(self) -> np.ndarray:
        """Indices of vertices on Gamma_in or Gamma_2, sorted."""
        return self.vertices_with_tag(*DIRICHLET_TAGS)

    def free_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_vertices, dtype=bool)
        mask[self.dirichlet_vertices()] = False
        return np.flatnonzero(mask)


def _vertex_tags(mesh: TriangleMesh) -> np.ndarray:
    # Dirichlet tags win over Gamma_1 at shared corners
    priority = {
        int(BoundaryTag.INTERIOR): 0,
        int(BoundaryTag.GAMMA_ONE): 1,
        int(BoundaryTag.GAMMA_IN): 2,
        int(BoundaryTag.GAMMA_TWO): 3,
    }
    tags = np.zeros(mesh.vertices.shape[0], dtype=int)
    for (a, b), t in zip(mesh.boundary_edges, mesh.edge_tags):
        for v in (a, b):
            if priority[int(t)] > priority[int(tags[v])]:
                tags[v] = int(t)
    return tags


def generate_rectangle_mesh(nx: int, ny: int, width: float = 1.0, height: float = 2.0,
                            tags: dict | None = None) -> TriangleMesh:
    """Structured right-triangle mesh of ``(0, width) x (0, height)``.

    Every cell is cut along its lower-left to upper-right diagonal.
    ``tags`` maps side names ``left``, ``right``, ``bottom``, ``top`` to
    boundary tags; the default puts the reservoir on the left and the
    electrode on the right.
    """
    if int(nx) < 1 or int(ny) < 1:
        raise MeshError(f"nx, ny must be >= 1, got {nx}, {ny}")
    if not (width > 0 and height > 0):
        raise MeshError(f"width and height must be positive, got {width}, {height}")
    nx, ny = int(nx), int(ny)
    side_tags = {
        "left": BoundaryTag.GAMMA_IN,
        "right": BoundaryTag.GAMMA_TWO,
        "bottom": BoundaryTag.GAMMA_ONE,
        "top": BoundaryTag.GAMMA_ONE,
    }
    if tags:
        unknown = set(tags) - set(side_tags)
        if unknown:
            raise MeshError(f"unknown rectangle sides {sorted(unknown)}")
        side_tags.update({k: BoundaryTag(v) for k, v in tags.items()})

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j = y index
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    edges, etags = [], []
    for k in range(nx):
        edges.append((vid(k, 0), vid(k + 1, 0)))
        etags.append(side_tags["bottom"])
    for k in range(ny):
        edges.append((vid(nx, k), vid(nx, k + 1)))
        etags.append(side_tags["right"])
    for k in range(nx, 0, -1):
        edges.append((vid(k, ny), vid(k - 1, ny)))
        etags.append(side_tags["top"])
    for k in range(ny, 0, -1):
        edges.append((vid(0, k), vid(0, k - 1)))
        etags.append(side_tags["left"])

    return TriangleMesh(vertices, triangles, np.array(edges, dtype=np.int64),
                        np.array(etags, dtype=int))


def generate_annulus_mesh(nr: int, ntheta: int, r_inner: float = 0.2,
                          r_outer: float = 1.0) -> TriangleMesh:
    """Polar structured mesh of the annulus ``r_inner < |x| < r_outer``.

    Rings are equally spaced in radius with ``ntheta`` vertices each; every
    other ring is rotated by half a sector so that each ring-to-ring band is
    cut into isosceles triangles (no obtuse angles for reasonable aspect
    ratios). The inner circle is ``GAMMA_IN``, the outer one ``GAMMA_TWO``.
    """
    if int(nr) < 1:
        raise MeshError(f"nr must be >= 1, got {nr}")
    if int(ntheta) < 3:
        raise MeshError(f"ntheta must be >= 3, got {ntheta}")
    if not (0.0 < r_inner < r_outer):
        raise MeshError(f"need 0 < r_inner < r_outer, got {r_inner}, {r_outer}")
    nr, nt = int(nr), int(ntheta)
    radii = np.linspace(r_inner, r_outer, nr + 1)
    dtheta = 2.0 * np.pi / nt
    verts = []
    for k, r in enumerate(radii):
        theta = dtheta * (np.arange(nt) + 0.5 * (k % 2))
        verts.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    vertices = np.vstack(verts)

    tris = []
    for k in range(nr):
        a0, b0 = k * nt, (k + 1) * nt
        for j in range(nt):
            jn = (j + 1) % nt
            if k % 2 == 0:
                # outer ring shifted forward: outer vertex j sits between inner j, j+1
                tris.append((a0 + j, a0 + jn, b0 + j))
                tris.append((a0 + jn, b0 + jn, b0 + j))
            else:
                # inner ring shifted forward: inner vertex j sits between outer j, j+1
                tris.append((a0 + j, b0 + jn, b0 + j))
                tris.append((a0 + j, a0 + jn, b0 + jn))
    triangles = np.array(tris, dtype=np.int64)
    p = vertices[triangles]
    cross = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = cross < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    edges, etags = [], []
    # inner circle traversed clockwise, outer counterclockwise (domain on the left)
    for j in range(nt):
        edges.append((j, (j - 1) % nt))
        etags.append(BoundaryTag.GAMMA_IN)
    o = nr * nt
    for j in range(nt):
        edges.append((o + j, o + (j + 1) % nt))
        etags.append(BoundaryTag.GAMMA_TWO)
    return TriangleMesh(vertices, triangles, np.array(edges, dtype=np.int64),
                        np.array(etags, dtype=int))


@dataclass
class MeshDiagnostics:
    min_area: float
    max_angle: float
    h: float
    is_nonobtuse: bool
    tag_edge_counts: dict
    n_inverted: int = 0
    n_obtuse: int = 0
    untagged_boundary_edges: int = 0

    @property
    def ok(self) -> bool:
        return self.n_inverted == 0 and self.untagged_boundary_edges == 0


def _triangle_angles(p: np.ndarray) -> np.ndarray:
    angles = np.empty(p.shape[:2])
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles[:, k] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return angles


def topological_boundary_edges(triangles: np.ndarray) -> set:
    """Edges that belong to exactly one triangle, as sorted vertex pairs."""
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return {tuple(x) for x in uniq[counts == 1]}


def validate_mesh(mesh: TriangleMesh, angle_tol: float = 1e-12) -> MeshDiagnostics:
    """Report element quality and boundary tagging problems.

    Inverted elements and untagged boundary edges are counted, not repaired.
    """
    signed = mesh.signed_areas()
    p = mesh.vertices[mesh.triangles]
    angles = _triangle_angles(p)
    max_angles = angles.max(axis=1)
    diam = np.max(np.stack([np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1)
                            for k in range(3)]), axis=0)
    obtuse = max_angles > 0.5 * np.pi + angle_tol

    tagged = {tuple(sorted(map(int, e))) for e in mesh.boundary_edges}
    topo = topological_boundary_edges(mesh.triangles)
    untagged = len(topo - tagged)

    counts = {t.name: int(np.sum(mesh.edge_tags == t))
              for t in (BoundaryTag.GAMMA_IN, BoundaryTag.GAMMA_ONE, BoundaryTag.GAMMA_TWO)}
    return MeshDiagnostics(
        min_area=float(signed.min()),
        max_angle=float(max_angles.max()),
        h=float(diam.max()),
        is_nonobtuse=not bool(obtuse.any()),
        tag_edge_counts=counts,
        n_inverted=int(np.sum(signed <= 0.0)),
        n_obtuse=int(obtuse.sum()),
        untagged_boundary_edges=untagged,
    )
