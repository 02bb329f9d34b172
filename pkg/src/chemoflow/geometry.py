"""Triangulated disc domains with an ordered boundary loop.

The solver works on a convex planar domain whose boundary carries its own
differential operators, so the mesh keeps more boundary structure than a
generic triangulation: an ordered closed loop of boundary vertices, the
cumulative arclength along that loop, and outward unit normals.  Meshes are
immutable after construction and safe to share between threads.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np


class MeshError(Exception):
    """A mesh violated a structural or geometric invariant."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Mesh:
    """Conforming P1 triangulation of a convex domain.

    Attributes
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Vertex index triples, all counter-clockwise.
    boundary_loop : (nb,) int array
        Boundary vertex indices forming one closed CCW cycle.
    boundary_arclength : (nb,) float array
        Cumulative polygonal arclength from ``boundary_loop[0]``.
    outward_normals : (nb, 2) float array
        Unit outward normal at each boundary vertex (edge-normal bisector).
    h_max : float
        Longest edge length over all triangles.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loop: np.ndarray
    boundary_arclength: np.ndarray
    outward_normals: np.ndarray
    h_max: float

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary_loop.shape[0]

    def triangle_areas(self) -> np.ndarray:
        """Signed triangle areas (positive for CCW orientation)."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def boundary_edge_lengths(self) -> np.ndarray:
        """Length of each boundary edge, edge j joining loop vertices j, j+1."""
        pts = self.vertices[self.boundary_loop]
        return np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)

    @property
    def perimeter(self) -> float:
        return float(self.boundary_edge_lengths().sum())

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())

    @property
    def inradius(self) -> float:
        """Distance from the centroid to the nearest boundary edge."""
        centroid = self.vertices.mean(axis=0)
        return float(self.distance_to_boundary(centroid[None, :])[0])

    def distance_to_boundary(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the boundary polygon."""
        pts = self.vertices[self.boundary_loop]
        a = pts
        b = np.roll(pts, -1, axis=0)
        ab = b - a  # (nb, 2)
        denom = np.einsum("ed,ed->e", ab, ab)
        ap = points[:, None, :] - a[None, :, :]  # (np, nb, 2)
        t = np.clip(np.einsum("ped,ed->pe", ap, ab) / denom, 0.0, 1.0)
        closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        d = np.linalg.norm(points[:, None, :] - closest, axis=2)
        return d.min(axis=1)

    def data_hash(self) -> str:
        """Hash binding checkpoints and ledgers to this exact mesh."""
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.triangles.tobytes())
        h.update(self.boundary_loop.tobytes())
        return h.hexdigest()

    def validate(self) -> None:
        """Check every structural invariant; raise MeshError listing failures."""
        problems = []
        areas = self.triangle_areas()
        if np.any(areas <= 0):
            problems.append(f"{int(np.sum(areas <= 0))} triangles with non-positive area")
        loop = self.boundary_loop
        if len(np.unique(loop)) != len(loop):
            problems.append("boundary loop revisits a vertex")
        if len(loop) < 3:
            problems.append("boundary loop has fewer than 3 vertices")
        arc = self.boundary_arclength
        if np.any(np.diff(arc) <= 0) or arc[0] != 0.0:
            problems.append("boundary arclength not strictly increasing from 0")
        edges = self.boundary_edge_lengths()
        total = arc[-1] + edges[-1]
        if not math.isclose(total, edges.sum(), rel_tol=1e-12):
            problems.append("cumulative arclength inconsistent with edge lengths")
        pts = self.vertices[loop]
        e = np.roll(pts, -1, axis=0) - pts
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross <= 0):
            problems.append("boundary polygon is not convex/CCW")
        norms = np.linalg.norm(self.outward_normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            problems.append("outward normals not unit length")
        if problems:
            raise MeshError("; ".join(problems))


@dataclass(frozen=True)
class TraceMap:
    """Index maps between global vertex fields and boundary-loop fields.

    ``restrict`` followed by ``prolong`` is the identity on boundary degrees
    of freedom and zero elsewhere.
    """

    boundary_vertices: np.ndarray  # global vertex index per boundary position
    n_global: int

    @property
    def n_boundary(self) -> int:
        return self.boundary_vertices.shape[0]

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[..., self.boundary_vertices]

    def prolong(self, boundary_values: np.ndarray) -> np.ndarray:
        boundary_values = np.asarray(boundary_values)
        out = np.zeros(boundary_values.shape[:-1] + (self.n_global,), dtype=boundary_values.dtype)
        out[..., self.boundary_vertices] = boundary_values
        return out


def build_trace_map(mesh: Mesh) -> TraceMap:
    """Trace map selecting boundary-loop values out of global vertex fields."""
    return TraceMap(
        boundary_vertices=_readonly(mesh.boundary_loop.copy()),
        n_global=mesh.n_vertices,
    )


def _zip_rings(inner: np.ndarray, outer: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate the annulus between two concentric CCW vertex rings.

    Walks both rings by angle, always connecting to whichever ring has the
    smaller next angle, which keeps every triangle CCW for rings sorted by
    increasing angle.
    """
    na, nb = len(inner), len(outer)
    tris = []
    ia = ib = 0
    while ia < na or ib < nb:
        next_a = (ia + 1) / na
        next_b = (ib + 1) / nb
        if ib < nb and (ia == na or next_b < next_a):
            tris.append((inner[ia % na], outer[ib % nb], outer[(ib + 1) % nb]))
            ib += 1
        else:
            tris.append((inner[ia % na], outer[ib % nb], inner[(ia + 1) % na]))
            ia += 1
    return tris


def build_disc_mesh(radius: float, target_h: float, first_ring: int = 6) -> Mesh:
    """Structured polar-ring triangulation of a disc centred at the origin.

    The construction is deterministic: rings of radius ``i * radius/n`` carry
    ``first_ring * i`` equally spaced vertices, so the outermost ring (the
    boundary loop) has ``first_ring * n`` vertices.  Edge lengths stay below
    ``1.5 * target_h``.

    Parameters
    ----------
    radius : float
        Disc radius, > 0.
    target_h : float
        Requested mesh size, 0 < target_h < radius.
    first_ring : int
        Vertex count of the innermost ring; the boundary vertex count is a
        multiple of this.  Must be >= 3.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not 0 < target_h < radius:
        raise ValueError(f"target_h must lie in (0, radius), got {target_h}")
    if first_ring < 3:
        raise ValueError(f"first_ring must be >= 3, got {first_ring}")

    n_rings = max(2, math.ceil(radius / target_h))
    dr = radius / n_rings

    verts = [np.zeros((1, 2))]
    ring_ids = []
    start = 1
    for i in range(1, n_rings + 1):
        count = first_ring * i
        theta = 2.0 * np.pi * np.arange(count) / count
        r = i * dr
        verts.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        ring_ids.append(np.arange(start, start + count))
        start += count
    vertices = np.vstack(verts)

    tris: list[tuple[int, int, int]] = []
    inner0 = ring_ids[0]
    for j in range(len(inner0)):
        tris.append((0, inner0[j], inner0[(j + 1) % len(inner0)]))
    for i in range(len(ring_ids) - 1):
        tris.extend(_zip_rings(ring_ids[i], ring_ids[i + 1]))
    triangles = np.asarray(tris, dtype=np.int64)

    boundary_loop = ring_ids[-1].astype(np.int64)
    mesh = _finalize_mesh(vertices, triangles, boundary_loop)
    mesh.validate()
    if mesh.h_max > 1.5 * target_h:
        raise MeshError(f"h_max {mesh.h_max:.3g} exceeds 1.5 * target_h {1.5 * target_h:.3g}")
    return mesh


def mesh_from_arrays(vertices, triangles, boundary_loop) -> Mesh:
    """Build a validated Mesh from raw arrays (CCW triangles, CCW loop)."""
    mesh = _finalize_mesh(
        np.asarray(vertices, dtype=np.float64),
        np.asarray(triangles, dtype=np.int64),
        np.asarray(boundary_loop, dtype=np.int64),
    )
    mesh.validate()
    return mesh


def _finalize_mesh(vertices: np.ndarray, triangles: np.ndarray, loop: np.ndarray) -> Mesh:
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    loop = np.asarray(loop, dtype=np.int64)

    pts = vertices[loop]
    edges = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    arclength = np.concatenate([[0.0], np.cumsum(edges[:-1])])

    # Outward normal at a vertex: normalised bisector of the two adjacent
    # edge normals (for CCW loops the edge normal is (ty, -tx)).
    tangents = np.roll(pts, -1, axis=0) - pts
    tangents /= np.linalg.norm(tangents, axis=1)[:, None]
    edge_normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    vertex_normals = edge_normals + np.roll(edge_normals, 1, axis=0)
    vertex_normals /= np.linalg.norm(vertex_normals, axis=1)[:, None]

    p = vertices[triangles]
    side = np.stack(
        [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1
    )
    h_max = float(np.linalg.norm(side, axis=2).max())

    return Mesh(
        vertices=_readonly(vertices),
        triangles=_readonly(triangles),
        boundary_loop=_readonly(loop),
        boundary_arclength=_readonly(arclength),
        outward_normals=_readonly(vertex_normals),
        h_max=h_max,
    )


# Plain-text mesh format: three sections, one record per line.
#   "vertices <nv>"  then nv lines "x y"
#   "triangles <nt>" then nt lines "i j k"
#   "boundary <nb>"  then nb lines "v"
# Floats use %.17g so the round trip is bit-exact.


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as f:
        f.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        f.write(f"triangles {mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            f.write(f"{a} {b} {c}\n")
        f.write(f"boundary {mesh.n_boundary}\n")
        for v in mesh.boundary_loop:
            f.write(f"{v}\n")


def load_mesh(path) -> Mesh:
    with open(path) as f:
        tokens = f.read().split()
    pos = 0

    def expect(keyword: str) -> int:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != keyword:
            raise MeshError(f"malformed mesh file: expected '{keyword}' section")
        count = int(tokens[pos + 1])
        pos += 2
        return count

    nv = expect("vertices")
    vertices = np.array(tokens[pos : pos + 2 * nv], dtype=np.float64).reshape(nv, 2)
    pos += 2 * nv
    nt = expect("triangles")
    triangles = np.array(tokens[pos : pos + 3 * nt], dtype=np.int64).reshape(nt, 3)
    pos += 3 * nt
    nb = expect("boundary")
    loop = np.array(tokens[pos : pos + nb], dtype=np.int64)

    mesh = _finalize_mesh(vertices, triangles, loop)
    mesh.validate()
    return mesh
