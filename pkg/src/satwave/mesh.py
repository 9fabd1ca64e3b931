"""Two-dimensional triangulations with a labelled boundary partition.

Boundary edges carry a label: ``GAMMA0`` for the actuated part of the
boundary and ``GAMMA1`` for the clamped part.  The partition is edge based,
so no edge ever straddles the two parts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, MeshDegeneracyError

GAMMA0 = 0
GAMMA1 = 1


@dataclass(frozen=True)
class Mesh:
    """Immutable P1 triangulation.

    Attributes
    ----------
    nodes : ndarray, shape (N, 2)
    triangles : ndarray, shape (T, 3)
        Counter-clockwise vertex triples.
    boundary_edges : ndarray, shape (E, 2)
        Node pairs oriented so that the domain lies on the left.
    edge_labels : ndarray, shape (E,)
        ``GAMMA0`` or ``GAMMA1`` per boundary edge.
    normals : ndarray, shape (E, 2)
        Outward unit normals.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_labels: np.ndarray
    normals: np.ndarray
    name: str = field(default="mesh", compare=False)

    def __post_init__(self):
        for arr in (self.nodes, self.triangles, self.boundary_edges,
                    self.edge_labels, self.normals):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[self.boundary_edges[:, 0]] + self.nodes[self.boundary_edges[:, 1]])

    @property
    def h(self) -> float:
        """Longest edge of the triangulation."""
        p = self.nodes[self.triangles]
        lengths = [np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)]
        return float(np.max(lengths))

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def nodes_on(self, label: int) -> np.ndarray:
        """Nodes incident to at least one boundary edge with ``label``."""
        return np.unique(self.boundary_edges[self.edge_labels == label])

    def with_labels(self, labels) -> "Mesh":
        """Return a copy carrying a different boundary partition."""
        labels = np.asarray(labels, dtype=int).copy()
        if labels.shape != self.edge_labels.shape:
            raise InvalidArgumentError("one label per boundary edge expected")
        if not np.isin(labels, (GAMMA0, GAMMA1)).all():
            raise InvalidArgumentError("labels must be GAMMA0 or GAMMA1")
        return Mesh(self.nodes.copy(), self.triangles.copy(), self.boundary_edges.copy(),
                    labels, self.normals.copy(), name=self.name)

    def relabel(self, predicate) -> "Mesh":
        """Label edges whose midpoint satisfies ``predicate`` as Γ₀, the rest Γ₁.

        ``predicate`` takes an (E, 2) array of midpoints and returns a boolean mask.
        """
        mask = np.asarray(predicate(self.edge_midpoints), dtype=bool)
        return self.with_labels(np.where(mask, GAMMA0, GAMMA1))

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        edges = [
            [int(i), int(j), int(lab), float(nx), float(ny)]
            for (i, j), lab, (nx, ny) in zip(self.boundary_edges, self.edge_labels, self.normals)
        ]
        return {
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_edges": edges,
        }

    def to_json(self, path=None, indent=None) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data: dict, name: str = "mesh") -> "Mesh":
        nodes = np.asarray(data["nodes"], dtype=float).reshape(-1, 2)
        triangles = np.asarray(data["triangles"], dtype=np.int64).reshape(-1, 3)
        be = np.asarray(data["boundary_edges"], dtype=float).reshape(-1, 5)
        return cls(nodes, triangles, be[:, :2].astype(np.int64), be[:, 2].astype(int),
                   be[:, 3:5].copy(), name=name)

    @classmethod
    def from_json(cls, text_or_path: str) -> "Mesh":
        if text_or_path.lstrip().startswith("{"):
            return cls.from_dict(json.loads(text_or_path))
        with open(text_or_path) as fh:
            return cls.from_dict(json.load(fh))


def from_triangulation(nodes, triangles, name="mesh") -> Mesh:
    """Orient triangles counter-clockwise, extract boundary edges and normals.

    All boundary edges are labelled Γ₀.
    """
    nodes = np.asarray(nodes, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64).copy()
    p = nodes[tris]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(np.abs(det) <= 1e-14 * max(1.0, np.abs(det).max())):
        raise MeshDegeneracyError("degenerate triangle in input")
    flip = det < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    edges = directed[counts[inverse] == 1]
    # stable ordering makes golden files reproducible
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]

    d = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None] + 0.0
    labels = np.full(len(edges), GAMMA0, dtype=int)
    return Mesh(nodes, tris, edges, labels, normals, name=name)


def build_unit_square_mesh(n: int) -> Mesh:
    """Structured triangulation of (0, 1)² with ``n`` cells per side, Γ₀ = Γ."""
    if int(n) != n or n < 2:
        raise InvalidArgumentError(f"need n >= 2 subdivisions, got {n!r}")
    n = int(n)
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return from_triangulation(nodes, tris, name=f"unit_square_{n}")


def build_annulus_mesh(r_inner: float, r_outer: float, resolution: float) -> Mesh:
    """Polar triangulation of the annulus r_inner < |x| < r_outer.

    The outer circle is Γ₀ and the inner circle Γ₁, which puts the two parts
    a positive distance apart and makes h·ν = -r_inner on Γ₁ for x₀ = 0.
    """
    if not (0.0 < r_inner < r_outer) or not np.isfinite(r_outer):
        raise InvalidArgumentError(f"need 0 < r_inner < r_outer, got {r_inner}, {r_outer}")
    if not resolution > 0:
        raise InvalidArgumentError("resolution must be positive")
    n_theta = max(8, int(np.ceil(2.0 * np.pi * r_outer / resolution)))
    n_r = max(1, int(np.ceil((r_outer - r_inner) / resolution)))
    radii = np.linspace(r_inner, r_outer, n_r + 1)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    R, TH = np.meshgrid(radii, theta, indexing="ij")
    nodes = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])

    idx = np.arange((n_r + 1) * n_theta).reshape(n_r + 1, n_theta)
    nxt = np.roll(idx, -1, axis=1)
    a = idx[:-1].ravel()
    b = nxt[:-1].ravel()
    c = nxt[1:].ravel()
    d = idx[1:].ravel()
    # alternate the diagonal cell by cell to avoid a preferred direction
    ii, jj = np.meshgrid(np.arange(n_r), np.arange(n_theta), indexing="ij")
    alt = ((ii + jj) % 2 == 1).ravel()
    t1 = np.where(alt[:, None], np.column_stack([a, b, d]), np.column_stack([a, b, c]))
    t2 = np.where(alt[:, None], np.column_stack([b, c, d]), np.column_stack([a, c, d]))
    mesh = from_triangulation(nodes, np.concatenate([t1, t2]),
                              name=f"annulus_{r_inner}_{r_outer}_{resolution}")
    return mesh.relabel(lambda m: np.linalg.norm(m, axis=1) > 0.5 * (r_inner + r_outer))


@dataclass
class GeometryReport:
    """Outcome of the geometric checks: separation of Γ₀/Γ₁ and sign of h·ν on Γ₁."""

    min_separation: float
    max_h_dot_nu_on_gamma1: float
    assumption3_satisfied: bool
    h_dot_nu: np.ndarray
    gamma1_empty: bool
    x0: tuple

    def violations(self) -> list[str]:
        out = []
        if not self.gamma1_empty:
            if not self.min_separation > 0:
                out.append("Assumption 3: closures of Gamma0 and Gamma1 intersect")
            if not self.max_h_dot_nu_on_gamma1 <= 0:
                out.append(f"Assumption 3: h.nu = {self.max_h_dot_nu_on_gamma1:.3g} > 0 on Gamma1")
        return out

    def to_dict(self) -> dict:
        return {
            "min_separation": self.min_separation,
            "max_h_dot_nu_on_gamma1": self.max_h_dot_nu_on_gamma1,
            "assumption3_satisfied": self.assumption3_satisfied,
            "gamma1_empty": self.gamma1_empty,
            "x0": list(self.x0),
        }


def h_dot_nu(mesh: Mesh, x0) -> np.ndarray:
    """(x - x0)·ν per boundary edge; constant along each straight edge."""
    x0 = np.asarray(x0, dtype=float)
    return np.einsum("ij,ij->i", mesh.edge_midpoints - x0, mesh.normals)


def check_geometric_assumptions(mesh: Mesh, x0) -> GeometryReport:
    """Separation of the boundary parts and h·ν ≤ 0 on Γ₁.  Never raises."""
    hn = h_dot_nu(mesh, x0)
    on1 = mesh.edge_labels == GAMMA1
    g0 = mesh.nodes_on(GAMMA0)
    g1 = mesh.nodes_on(GAMMA1)
    empty1 = not on1.any()
    if empty1 or len(g0) == 0:
        sep = float("inf")
    else:
        dist, _ = cKDTree(mesh.nodes[g0]).query(mesh.nodes[g1])
        sep = float(dist.min())
    max_hn = float(hn[on1].max()) if not empty1 else float("-inf")
    ok = (sep > 0 or empty1) and (max_hn <= 0 or empty1)
    return GeometryReport(sep, max_hn, bool(ok), hn, empty1, tuple(float(c) for c in x0))
