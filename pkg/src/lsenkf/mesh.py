"""Triangulated disk, square receiver layout and triangle quadrature."""

from dataclasses import dataclass, field
from functools import cached_property
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangulation of the disk ``|x| <= radius``.

    Attributes
    ----------
    nodes : ndarray, shape (n, 2)
    elements : ndarray of int, shape (m, 3)
        Counter-clockwise node triples.
    boundary_nodes : ndarray of int
        Sorted indices of nodes lying on the circle.
    radius : float
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    radius: float

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @cached_property
    def signed_areas(self):
        p = self.nodes[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def mesh_size_h(self):
        """Largest element diameter (longest edge)."""
        p = self.nodes[self.elements]
        edges = p - np.roll(p, -1, axis=1)
        return float(np.sqrt((edges ** 2).sum(axis=2)).max())

    @cached_property
    def centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def boundary_mask(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @cached_property
    def interior_nodes(self):
        return np.flatnonzero(~self.boundary_mask)

    @cached_property
    def lumped_areas(self):
        """Row sums of the P1 mass matrix: a third of each adjacent area."""
        out = np.zeros(self.n_nodes)
        np.add.at(out, self.elements.ravel(), np.repeat(self.areas / 3.0, 3))
        return out

    @cached_property
    def basis_gradients(self):
        """Gradients of the three hat functions on every element, (m, 3, 2)."""
        p = self.nodes[self.elements]
        two_a = 2.0 * self.signed_areas
        grads = np.empty((self.n_elements, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / two_a
            grads[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / two_a
        return grads

    @cached_property
    def element_to_node_average(self):
        """Sparse (n, m) area-weighted averaging of element values to nodes."""
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(self.n_elements), 3)
        vals = np.repeat(self.areas, 3)
        avg = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes, self.n_elements))
        weight = np.asarray(avg.sum(axis=1)).ravel()
        if np.any(weight == 0.0):
            isolated = np.flatnonzero(weight == 0.0)
            raise ValueError(f"isolated nodes without adjacent elements: {isolated[:10]}")
        return sp.diags(1.0 / weight) @ avg

    def validate(self):
        """Raise ``ValueError`` if any structural invariant is violated."""
        n = self.n_nodes
        el = self.elements
        if el.ndim != 2 or el.shape[1] != 3 or el.shape[0] == 0:
            raise ValueError("elements must be a non-empty (m, 3) array")
        if el.min() < 0 or el.max() >= n:
            raise ValueError("element index out of range")
        if np.any((el[:, 0] == el[:, 1]) | (el[:, 1] == el[:, 2]) | (el[:, 0] == el[:, 2])):
            raise ValueError("element with repeated node")
        if np.any(self.signed_areas <= 0.0):
            raise ValueError("element not counter-clockwise or degenerate")
        if not np.all(np.isfinite(self.nodes)):
            raise ValueError("non-finite node coordinates")
        r = np.hypot(self.nodes[:, 0], self.nodes[:, 1])
        on_circle = np.flatnonzero(np.abs(r - self.radius) <= 1e-9 * self.radius)
        if not np.array_equal(on_circle, np.sort(self.boundary_nodes)):
            raise ValueError("boundary_nodes differ from nodes on the circle")
        return self


def build_disk_mesh(radius, target_h):
    """Structured polar-ring triangulation of a disk centred at the origin.

    Ring ``j`` (``j = 1..R``) sits at radius ``j * radius / R`` with ``6 j``
    equally spaced nodes; consecutive rings are stitched by an angular merge.
    ``R = ceil(radius / target_h)``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if not 0 < target_h < radius:
        raise ValueError("target_h must satisfy 0 < target_h < radius")
    n_rings = int(math.ceil(radius / target_h - 1e-12))
    dr = radius / n_rings

    nodes = [(0.0, 0.0)]
    ring_start = [0]
    for j in range(1, n_rings + 1):
        ring_start.append(len(nodes))
        count = 6 * j
        r = radius if j == n_rings else j * dr
        for i in range(count):
            t = 2.0 * math.pi * i / count
            nodes.append((r * math.cos(t), r * math.sin(t)))

    elements = []
    # central fan
    for i in range(6):
        b0 = ring_start[1] + i
        b1 = ring_start[1] + (i + 1) % 6
        elements.append((0, b0, b1))
    for j in range(2, n_rings + 1):
        na, nb = 6 * (j - 1), 6 * j
        sa, sb = ring_start[j - 1], ring_start[j]
        a = b = 0
        while a < na or b < nb:
            if a == na:
                take_outer = True
            elif b == nb:
                take_outer = False
            else:
                # shorter of the two candidate diagonals; ties go outward
                pa, pb = nodes[sa + a], nodes[sb + b]
                pa1, pb1 = nodes[sa + (a + 1) % na], nodes[sb + (b + 1) % nb]
                d_out = math.dist(pa, pb1)
                d_in = math.dist(pb, pa1)
                take_outer = d_out <= d_in * (1.0 + 1e-12)
            if take_outer:
                elements.append((sa + a % na, sb + b, sb + (b + 1) % nb))
                b += 1
            else:
                elements.append((sa + a, sb + b % nb, sa + (a + 1) % na))
                a += 1

    nodes = np.array(nodes)
    elements = np.array(elements, dtype=np.int64)
    boundary = np.arange(ring_start[n_rings], len(nodes))
    return TriMesh(nodes, elements, boundary, float(radius)).validate()


@dataclass(frozen=True, eq=False)
class ReceiverArray:
    points: np.ndarray
    square_half_side: float

    @property
    def count(self):
        return self.points.shape[0]

    def check_outside_disk(self, radius):
        dist = np.hypot(self.points[:, 0], self.points[:, 1])
        if np.any(dist <= radius):
            raise ValueError("receivers must lie strictly outside the disk")


def square_receivers(half_side, per_side):
    """``4 (per_side - 1)`` points evenly spaced on the square boundary.

    Ordering starts at the lower-left corner and runs counter-clockwise;
    every corner appears exactly once.
    """
    if per_side < 2:
        raise ValueError("per_side must be at least 2")
    if not half_side > 0:
        raise ValueError("half_side must be positive")
    a = float(half_side)
    n = per_side - 1
    s = [-a + 2.0 * a * t / n for t in range(n)]  # lower corner .. before upper
    pts = []
    pts += [(v, -a) for v in s]             # bottom, left to right
    pts += [(a, v) for v in s]              # right, bottom to top
    pts += [(-v, a) for v in s]             # top, right to left
    pts += [(-a, -v) for v in s]            # left, top to bottom
    return ReceiverArray(np.array(pts), a)


@dataclass(frozen=True)
class TriQuadRule:
    """Quadrature on a triangle, weights relative to its area."""

    barycentric_points: np.ndarray  # (q, 3)
    weights: np.ndarray             # (q,)
    order: int = field(default=0)

    def physical_points(self, mesh):
        """Quadrature points of every element, shape (m, q, 2)."""
        return np.einsum("qi,mid->mqd", self.barycentric_points, mesh.nodes[mesh.elements])


def _perms(a, b):
    return [(a, b, b), (b, a, b), (b, b, a)]


def triangle_quadrature(order=2):
    """Symmetric quadrature rule exact for total degree ``<= order``.

    ``order=1`` is the centroid rule, ``order=2`` the three-point interior
    rule, ``order=3`` the six-point Dunavant rule (exact to degree 4).
    """
    if order == 1:
        pts = [(1 / 3, 1 / 3, 1 / 3)]
        w = [1.0]
    elif order == 2:
        pts = _perms(2 / 3, 1 / 6)
        w = [1 / 3] * 3
    elif order == 3:
        a1, b1 = 0.108103018168070, 0.445948490915965
        a2, b2 = 0.816847572980459, 0.091576213509771
        pts = _perms(a1, b1) + _perms(a2, b2)
        w = [0.223381589678011] * 3 + [0.109951743655322] * 3
    else:
        raise ValueError(f"unsupported quadrature order {order!r}")
    pts = np.array(pts, dtype=float)
    pts /= pts.sum(axis=1, keepdims=True)
    w = np.array(w, dtype=float)
    w /= w.sum()
    return TriQuadRule(pts, w, order)


def element_gradients(mesh, nodal_field):
    """Gradient of the linear interpolant on every element.

    ``nodal_field`` may be (n,) or (n, k); returns ``(gx, gy)`` of shape
    (m,) or (m, k).  Built from nodal differences, so a constant field gives
    exactly zero.
    """
    nodal_field = np.asarray(nodal_field, dtype=float)
    if nodal_field.shape[0] != mesh.n_nodes:
        raise ValueError("nodal field length does not match node count")
    v = nodal_field[mesh.elements]  # (m, 3) or (m, 3, k)
    d1 = v[:, 1] - v[:, 0]
    d2 = v[:, 2] - v[:, 0]
    g = mesh.basis_gradients
    if nodal_field.ndim == 2:
        g = g[:, :, :, None]
    return g[:, 1, 0] * d1 + g[:, 2, 0] * d2, g[:, 1, 1] * d1 + g[:, 2, 1] * d2


def element_gradient(mesh, nodal_field, element):
    if not 0 <= element < mesh.n_elements:
        raise IndexError(f"element {element} out of range")
    nodal_field = np.asarray(nodal_field, dtype=float)
    if nodal_field.shape != (mesh.n_nodes,):
        raise ValueError("nodal field length does not match node count")
    g = mesh.basis_gradients[element]
    v = nodal_field[mesh.elements[element]]
    d1, d2 = v[1] - v[0], v[2] - v[0]
    return float(g[1, 0] * d1 + g[2, 0] * d2), float(g[1, 1] * d1 + g[2, 1] * d2)


def write_mesh(mesh, path):
    lines = [f"nodes {mesh.n_nodes} elements {mesh.n_elements}"]
    flags = mesh.boundary_mask
    for (x, y), flag in zip(mesh.nodes.tolist(), flags.tolist()):
        lines.append(f"{x!r} {y!r} {int(flag)}")
    for i, j, k in mesh.elements.tolist():
        lines.append(f"{i} {j} {k}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, radius=None):
    """Inverse of :func:`write_mesh`. ``radius`` defaults to the largest
    distance of a flagged boundary node from the origin."""
    lines = Path(path).read_text().splitlines()
    head = lines[0].split()
    if len(head) != 4 or head[0] != "nodes" or head[2] != "elements":
        raise ValueError(f"bad mesh header: {lines[0]!r}")
    n, m = int(head[1]), int(head[3])
    node_rows = [ln.split() for ln in lines[1:1 + n]]
    nodes = np.array([[float(r[0]), float(r[1])] for r in node_rows])
    flags = np.array([int(r[2]) for r in node_rows], dtype=bool)
    elements = np.array([[int(v) for v in ln.split()] for ln in lines[1 + n:1 + n + m]],
                        dtype=np.int64).reshape(m, 3)
    boundary = np.flatnonzero(flags)
    if radius is None:
        radius = float(np.hypot(nodes[boundary, 0], nodes[boundary, 1]).max())
    return TriMesh(nodes, elements, boundary, float(radius))
