"""Structured periodic RVE meshes of trilinear hexahedra.

The cube ``[0, L]^3`` is split into ``n^3`` equal hexahedra. Elements whose
centroid falls inside an inclusion sphere take that inclusion's material id.
Periodic boundary conditions are imposed by master-slave elimination: every
node is identified with its image in ``[0, L)^3`` and the fluctuation of the
origin corner is pinned to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Invalid mesh specification or geometric mismatch."""


# Reference-cube corner signs in the usual hexahedron node order.
HEX_CORNERS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)

_GP = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = HEX_CORNERS * _GP
GAUSS_WEIGHTS = np.ones(8)


@dataclass(frozen=True)
class Inclusion:
    center: tuple[float, float, float]
    radius: float
    material_id: int = 1


@dataclass(frozen=True)
class MeshSpec:
    edge_length: float = 6.0
    divisions: int = 6
    inclusions: tuple[Inclusion, ...] = ()
    matrix_material_id: int = 0

    def validate(self, min_divisions: int = 1) -> None:
        if self.edge_length <= 0:
            raise MeshError("edge_length must be positive")
        if self.divisions < min_divisions:
            raise MeshError(f"divisions must be >= {min_divisions}, got {self.divisions}")
        L = self.edge_length
        for inc in self.inclusions:
            c = np.asarray(inc.center, dtype=float)
            if inc.radius <= 0:
                raise MeshError("inclusion radius must be positive")
            if np.any(c - inc.radius <= 0.0) or np.any(c + inc.radius >= L):
                raise MeshError(
                    f"inclusion at {tuple(c)} with radius {inc.radius} touches the cell "
                    "boundary; periodic wrapping of inclusions is not supported"
                )


def paper_spec(divisions: int = 6) -> MeshSpec:
    """Two-inclusion cell: edge 6 mm, r = 1.5 mm at (2,2,2) and (4,4,4)."""
    return MeshSpec(
        edge_length=6.0,
        divisions=divisions,
        inclusions=(
            Inclusion((2.0, 2.0, 2.0), 1.5, 1),
            Inclusion((4.0, 4.0, 4.0), 1.5, 1),
        ),
        matrix_material_id=0,
    )


@dataclass(frozen=True, eq=False)
class Mesh:
    node_coords: np.ndarray  # (n_nodes, 3)
    elements: np.ndarray  # (n_elem, 8)
    element_material: np.ndarray  # (n_elem,)
    quad_points: np.ndarray  # (n_gp, 3) in the reference cube
    quad_weights: np.ndarray  # (n_gp,)
    edge_length: float
    divisions: int
    # Derived geometric data, filled in by build_rve_mesh.
    dNdX: np.ndarray = field(repr=False, default=None)  # (n_elem, n_gp, 8, 3)
    detJw: np.ndarray = field(repr=False, default=None)  # (n_elem, n_gp)

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def volume(self) -> float:
        return float(self.detJw.sum())

    def element_volumes(self) -> np.ndarray:
        return self.detJw.sum(axis=1)


def shape_eval(local_coords) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear shape functions and their reference-coordinate gradients.

    Returns ``(values, gradients)`` with shapes ``(8,)`` and ``(8, 3)``.
    Accepts a batch of points of shape ``(..., 3)`` as well.
    """
    xi = np.asarray(local_coords, dtype=float)
    # factors (..., 8, 3): 1 + xi_a * sign_a
    f = 1.0 + xi[..., None, :] * HEX_CORNERS
    values = 0.125 * f.prod(axis=-1)
    grads = np.empty(f.shape)
    grads[..., 0] = 0.125 * HEX_CORNERS[:, 0] * f[..., 1] * f[..., 2]
    grads[..., 1] = 0.125 * HEX_CORNERS[:, 1] * f[..., 0] * f[..., 2]
    grads[..., 2] = 0.125 * HEX_CORNERS[:, 2] * f[..., 0] * f[..., 1]
    return values, grads


def _grid_index(i, j, k, n1):
    return i + n1 * (j + n1 * k)


def build_rve_mesh(spec: MeshSpec) -> Mesh:
    spec.validate()
    n = spec.divisions
    n1 = n + 1
    L = spec.edge_length
    h = L / n

    ticks = np.linspace(0.0, L, n1)
    kk, jj, ii = np.meshgrid(np.arange(n1), np.arange(n1), np.arange(n1), indexing="ij")
    coords = np.stack([ticks[ii.ravel()], ticks[jj.ravel()], ticks[kk.ravel()]], axis=1)

    ek, ej, ei = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    ei, ej, ek = ei.ravel(), ej.ravel(), ek.ravel()
    offsets = ((HEX_CORNERS + 1) // 2).astype(int)
    elements = np.stack(
        [_grid_index(ei + o[0], ej + o[1], ek + o[2], n1) for o in offsets], axis=1
    )

    centroids = np.stack([(ei + 0.5) * h, (ej + 0.5) * h, (ek + 0.5) * h], axis=1)
    material = np.full(len(elements), spec.matrix_material_id, dtype=np.int64)
    for inc in spec.inclusions:
        inside = np.linalg.norm(centroids - np.asarray(inc.center), axis=1) < inc.radius
        material[inside] = inc.material_id

    _, dNdxi = shape_eval(GAUSS_POINTS)  # (n_gp, 8, 3)
    Xe = coords[elements]  # (ne, 8, 3)
    # J[e, g, i, j] = dX_i / dxi_j
    J = np.einsum("eki,gkj->egij", Xe, dNdxi)
    detJ = np.linalg.det(J)
    if np.any(detJ <= 0):
        raise MeshError("non-positive element Jacobian")
    Jinv = np.linalg.inv(J)
    dNdX = np.einsum("gkj,egji->egki", dNdxi, Jinv)

    return Mesh(
        node_coords=coords,
        elements=elements.astype(np.int64),
        element_material=material,
        quad_points=GAUSS_POINTS.copy(),
        quad_weights=GAUSS_WEIGHTS.copy(),
        edge_length=float(L),
        divisions=n,
        dNdX=dNdX,
        detJw=detJ * GAUSS_WEIGHTS,
    )


@dataclass(frozen=True, eq=False)
class PeriodicMap:
    """Master-slave elimination of periodic fluctuation DOFs.

    ``node_master[i]`` is the canonical node of node ``i``; ``node_dof[i, a]``
    is the free DOF of component ``a`` of node ``i`` or ``-1`` when anchored.
    """

    node_master: np.ndarray
    node_dof: np.ndarray
    free_dofs: np.ndarray  # nodal dof ids (3*node + a) that are independent
    slave_pairs: np.ndarray  # (n_slave_dofs, 2) nodal (slave, master) dof ids
    anchor_node: int
    element_dofs: np.ndarray  # (n_elem, 24), free dof or -1

    @property
    def D(self) -> int:
        return int(self.free_dofs.size)

    def gather(self, nodal: np.ndarray) -> np.ndarray:
        """Sum nodal (n_nodes, 3) contributions onto free DOFs."""
        flat = np.asarray(nodal, dtype=float).reshape(-1)
        idx = self.node_dof.reshape(-1)
        keep = idx >= 0
        return np.bincount(idx[keep], weights=flat[keep], minlength=self.D)

    def scatter(self, u: np.ndarray) -> np.ndarray:
        """Expand a free-DOF vector to the full (n_nodes, 3) nodal field."""
        u = np.asarray(u, dtype=float)
        padded = np.concatenate([u, [0.0]])
        return padded[self.node_dof]

    def restrict(self, nodal: np.ndarray) -> np.ndarray:
        """Pick free-DOF values from a periodic nodal field (inverse of scatter)."""
        return np.asarray(nodal, dtype=float).reshape(-1)[self.free_dofs]

    def canonicalize(self, nodes: np.ndarray) -> np.ndarray:
        return self.node_master[np.asarray(nodes)]


def build_periodic_map(mesh: Mesh, tol: float = 1e-9) -> PeriodicMap:
    L = mesh.edge_length
    X = mesh.node_coords
    wrapped = np.where(X > L - tol * max(L, 1.0), X - L, X)
    # Identify nodes by their wrapped position on the grid.
    n = mesh.divisions
    h = L / n
    grid = np.rint(wrapped / h)
    if np.any(np.abs(grid * h - wrapped) > tol * max(L, 1.0)):
        raise MeshError("nodes do not lie on a periodic grid")
    grid = grid.astype(np.int64)
    key = grid[:, 0] + n * (grid[:, 1] + n * grid[:, 2])
    # Canonical node: the member of each image class with minimal coordinates.
    n_nodes = len(X)
    order = np.lexsort((X[:, 0], X[:, 1], X[:, 2], key))
    first = np.ones(n_nodes, dtype=bool)
    first[1:] = key[order][1:] != key[order][:-1]
    owner = np.maximum.accumulate(np.where(first, np.arange(n_nodes), 0))
    node_master = np.empty(n_nodes, dtype=np.int64)
    node_master[order] = order[owner]

    for axis in range(3):
        # every slave must sit at a whole number of edge lengths from its master
        diff = X[:, axis] - X[node_master, axis]
        if np.any((np.abs(diff) > tol) & (np.abs(diff - L) > tol)):
            raise MeshError("unmatched periodic node pair")

    anchor = int(np.argmin(np.linalg.norm(X, axis=1)))
    anchor = int(node_master[anchor])

    masters = np.unique(node_master)
    masters = masters[masters != anchor]
    node_dof = np.full((n_nodes, 3), -1, dtype=np.int64)
    master_dof = np.full((n_nodes, 3), -1, dtype=np.int64)
    master_dof[masters] = 3 * np.arange(len(masters))[:, None] + np.arange(3)
    node_dof[:] = master_dof[node_master]
    free_dofs = (3 * masters[:, None] + np.arange(3)).ravel()

    slaves = np.nonzero(node_master != np.arange(n_nodes))[0]
    slave_pairs = np.stack(
        [
            (3 * slaves[:, None] + np.arange(3)).ravel(),
            (3 * node_master[slaves][:, None] + np.arange(3)).ravel(),
        ],
        axis=1,
    ) if len(slaves) else np.zeros((0, 2), dtype=np.int64)

    element_dofs = node_dof[mesh.elements].reshape(mesh.n_elements, 24)
    return PeriodicMap(
        node_master=node_master,
        node_dof=node_dof,
        free_dofs=free_dofs,
        slave_pairs=slave_pairs,
        anchor_node=anchor,
        element_dofs=element_dofs,
    )
