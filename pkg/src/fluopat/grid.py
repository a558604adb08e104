"""Spatial mesh on (-1,1)^2, angular quadrature on S^1, and field containers.

Fields are plain numpy arrays with fixed shape conventions:

* scalar field: ``(n_cells,)`` -- one value per triangle (cellwise constant)
* angular field: ``(n_cells, n_dirs)`` -- photon density per cell and ordinate
* boundary source: ``(n_boundary_edges, n_dirs)`` -- meaningful on inflow pairs

All grid objects are immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Directions grazing an edge (|n.v| below this) carry no upwind flux and are
# classified as outflow so inflow traces never divide by a near-zero |n.v|.
GRAZE_TOL = 1e-14


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of the square (-1,1)^2.

    Edge ``e`` of cell ``i`` joins vertices ``cells[i, e]`` and
    ``cells[i, (e+1) % 3]``; vertices are ordered counterclockwise so the
    stored edge normals point outward.
    """

    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3) vertex indices, CCW
    cell_areas: np.ndarray        # (nc,)
    cell_centroids: np.ndarray    # (nc, 2)
    neighbors: np.ndarray         # (nc, 3) cell across edge e, -1 on boundary
    edge_normals: np.ndarray      # (nc, 3, 2) outward unit normals
    edge_lengths: np.ndarray      # (nc, 3)
    boundary_cells: np.ndarray    # (nb,) owning cell of each boundary edge
    boundary_local_edges: np.ndarray  # (nb,) local edge index in owning cell
    boundary_normals: np.ndarray  # (nb, 2) outward unit normals
    boundary_lengths: np.ndarray  # (nb,)
    boundary_midpoints: np.ndarray  # (nb, 2)
    boundary_index: np.ndarray    # (nc, 3) boundary edge id or -1

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_boundary_edges(self) -> int:
        return self.boundary_cells.shape[0]


@dataclass(frozen=True)
class OrdinateSet:
    """Discrete ordinates v_k on the unit circle with normalized weights.

    The angular measure is normalized (weights sum to 1): the angular
    average of a constant is that constant.  The set is symmetric under
    v -> -v; ``opposite[k]`` is the index of -v_k.
    """

    directions: np.ndarray  # (nk, 2)
    weights: np.ndarray     # (nk,)
    opposite: np.ndarray    # (nk,)

    @property
    def n_dirs(self) -> int:
        return self.directions.shape[0]


def build_mesh(n_per_side: int) -> Mesh:
    """Uniform triangulation of (-1,1)^2 with 2*n_per_side^2 triangles.

    Each grid square is split along its lower-left/upper-right diagonal.
    Deterministic for fixed ``n_per_side``.
    """
    if n_per_side < 2:
        raise ValueError(f"n_per_side must be >= 2, got {n_per_side}")
    n = int(n_per_side)
    coords = np.linspace(-1.0, 1.0, n + 1)
    xv, yv = np.meshgrid(coords, coords, indexing="xy")
    vertices = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    cells = np.asarray(cells, dtype=np.int64)

    p0 = vertices[cells[:, 0]]
    p1 = vertices[cells[:, 1]]
    p2 = vertices[cells[:, 2]]
    cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (
        p1[:, 1] - p0[:, 1]
    ) * (p2[:, 0] - p0[:, 0])
    cell_areas = 0.5 * cross
    cell_centroids = (p0 + p1 + p2) / 3.0

    nc = cells.shape[0]
    neighbors = np.full((nc, 3), -1, dtype=np.int64)
    edge_normals = np.zeros((nc, 3, 2))
    edge_lengths = np.zeros((nc, 3))
    edge_owner: dict[tuple[int, int], tuple[int, int]] = {}
    for ci in range(nc):
        tri = cells[ci]
        for e in range(3):
            va, vb = tri[e], tri[(e + 1) % 3]
            d = vertices[vb] - vertices[va]
            length = float(np.hypot(d[0], d[1]))
            edge_lengths[ci, e] = length
            # outward normal of a CCW polygon edge
            edge_normals[ci, e] = (d[1] / length, -d[0] / length)
            key = (min(va, vb), max(va, vb))
            if key in edge_owner:
                cj, ej = edge_owner.pop(key)
                neighbors[ci, e] = cj
                neighbors[cj, ej] = ci
            else:
                edge_owner[key] = (ci, e)

    b_cells, b_edges = [], []
    boundary_index = np.full((nc, 3), -1, dtype=np.int64)
    for (va, vb), (ci, e) in sorted(edge_owner.items()):
        boundary_index[ci, e] = len(b_cells)
        b_cells.append(ci)
        b_edges.append(e)
    b_cells = np.asarray(b_cells, dtype=np.int64)
    b_edges = np.asarray(b_edges, dtype=np.int64)
    b_normals = edge_normals[b_cells, b_edges]
    b_lengths = edge_lengths[b_cells, b_edges]
    va = cells[b_cells, b_edges]
    vb = cells[b_cells, (b_edges + 1) % 3]
    b_midpoints = 0.5 * (vertices[va] + vertices[vb])

    mesh = Mesh(
        vertices=vertices,
        cells=cells,
        cell_areas=cell_areas,
        cell_centroids=cell_centroids,
        neighbors=neighbors,
        edge_normals=edge_normals,
        edge_lengths=edge_lengths,
        boundary_cells=b_cells,
        boundary_local_edges=b_edges,
        boundary_normals=b_normals,
        boundary_lengths=b_lengths,
        boundary_midpoints=b_midpoints,
        boundary_index=boundary_index,
    )
    for arr in vars(mesh).values():
        arr.setflags(write=False)
    return mesh


def build_ordinates(n_dirs: int) -> OrdinateSet:
    """Uniform ordinates v_k = (cos t_k, sin t_k), t_k = 2 pi k/n + pi/n.

    The half-step offset keeps directions away from the coordinate axes so
    they never graze axis-aligned mesh edges.  Weights are uniform 1/n.
    """
    if n_dirs < 4 or n_dirs % 2 != 0:
        raise ValueError(f"n_dirs must be even and >= 4, got {n_dirs}")
    k = np.arange(n_dirs)
    theta = 2.0 * np.pi * k / n_dirs + np.pi / n_dirs
    directions = np.column_stack([np.cos(theta), np.sin(theta)])
    weights = np.full(n_dirs, 1.0 / n_dirs)
    opposite = (k + n_dirs // 2) % n_dirs
    ords = OrdinateSet(directions=directions, weights=weights, opposite=opposite)
    for arr in vars(ords).values():
        arr.setflags(write=False)
    return ords


def classify_boundary(mesh: Mesh, ords: OrdinateSet) -> np.ndarray:
    """Inflow mask over (boundary edge, ordinate) pairs.

    True where n(x).v < -GRAZE_TOL (the inflow set); grazing pairs count as
    outflow.  The outflow set is the complement.
    """
    ndotv = mesh.boundary_normals @ ords.directions.T  # (nb, nk)
    return ndotv < -GRAZE_TOL


def l2_inner(mesh: Mesh, a: np.ndarray, b: np.ndarray) -> float:
    """Area-weighted L2(Omega) inner product of two scalar fields."""
    return float(np.sum(mesh.cell_areas * a * b))


def l2_norm(mesh: Mesh, a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(mesh.cell_areas * a * a)))


def save_fields_csv(path, mesh: Mesh, columns: dict[str, np.ndarray]) -> None:
    """Write scalar fields as CSV: header ``x,y,<names...>``, one row per cell."""
    names = list(columns)
    data = np.column_stack(
        [mesh.cell_centroids[:, 0], mesh.cell_centroids[:, 1]]
        + [np.asarray(columns[n]) for n in names]
    )
    header = ",".join(["x", "y"] + names)
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def save_angular_field_csv(path, mesh: Mesh, u: np.ndarray) -> None:
    """Write an angular field as CSV: header ``x,y,k0..k{n-1}``."""
    names = [f"k{j}" for j in range(u.shape[1])]
    save_fields_csv(path, mesh, dict(zip(names, u.T)))
