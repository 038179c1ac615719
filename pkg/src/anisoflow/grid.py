"""Uniform P1 finite element grids on boxes with lumped mass.

The domain is a box (0,L1) or (0,L1)x(0,L2) meshed uniformly: intervals in
1D, square cells split into two triangles in 2D.  Nodes are ordered
lexicographically with the x-index running fastest.  All assembly is built
on two facts that hold for P1 simplices:

* gradients of nodal basis functions are constant per element, so any
  divergence-form term (q, grad phi) with an element-constant flux q is
  assembled exactly;
* the row sum of the exact P1 element mass matrix is |e|/(d+1), so mass
  lumping reduces every L2 pairing to a diagonal weight vector.

Fields are plain 1-D numpy arrays of nodal values; the grid travels
alongside them in function signatures.
"""

import hashlib
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .linalg import conjugate_gradient

# reference-simplex basis gradients, per dimension
_REF_GRADS = {
    1: np.array([[-1.0], [1.0]]),
    2: np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]),
}


class Grid:
    """Uniform simplicial P1 mesh of a 1D or 2D box.

    Attributes
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    shape : tuple of int
        Nodes per axis (n1,) or (n1, n2).
    lengths : tuple of float
        Box side lengths; the domain is the product of (0, L_k).
    spacing : tuple of float
        h_k = L_k / (n_k - 1).
    nodes : ndarray, (n_nodes, dim)
        Node coordinates, lexicographic order, x fastest.
    elements : ndarray, (n_elements, dim+1)
        Node indices per element.
    measures : ndarray, (n_elements,)
        Element lengths/areas.
    basis_gradients : ndarray, (n_elements, dim+1, dim)
        Constant gradient of each local basis function on each element.
    weights : ndarray, (n_nodes,)
        Lumped mass (row sums of the exact P1 mass matrix).
    """

    def __init__(self, dim, nodes_per_axis, lengths):
        if dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {dim}")
        nodes_per_axis = tuple(int(n) for n in np.atleast_1d(nodes_per_axis))
        lengths = tuple(float(L) for L in np.atleast_1d(lengths))
        if len(nodes_per_axis) != dim or len(lengths) != dim:
            raise ValueError(
                f"expected {dim} node counts and lengths, got "
                f"{nodes_per_axis} and {lengths}")
        if any(n < 2 for n in nodes_per_axis):
            raise ValueError(f"need at least 2 nodes per axis, got {nodes_per_axis}")
        if any(L <= 0 for L in lengths):
            raise ValueError(f"lengths must be positive, got {lengths}")

        self.dim = dim
        self.shape = nodes_per_axis
        self.lengths = lengths
        self.spacing = tuple(L / (n - 1) for L, n in zip(lengths, nodes_per_axis))

        self.nodes = self._build_nodes()
        self.elements = self._build_elements()
        self._build_element_geometry()
        self.weights = self._lumped_weights()

        # static index arrays for sparse assembly of (d+1)x(d+1) blocks
        k = dim + 1
        self._asm_rows = np.repeat(self.elements, k, axis=1).ravel()
        self._asm_cols = np.tile(self.elements, (1, k)).ravel()
        self._stiffness = None
        self._riesz = None

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def _build_nodes(self):
        axes = [np.linspace(0.0, L, n) for L, n in zip(self.lengths, self.shape)]
        if self.dim == 1:
            return axes[0][:, None]
        X, Y = np.meshgrid(axes[0], axes[1])  # X[i2, i1] = x-coordinate i1
        return np.column_stack([X.ravel(), Y.ravel()])

    def _build_elements(self):
        if self.dim == 1:
            n = self.shape[0]
            left = np.arange(n - 1)
            return np.column_stack([left, left + 1])
        n1, n2 = self.shape
        c1, c2 = np.meshgrid(np.arange(n1 - 1), np.arange(n2 - 1))
        v00 = (c2 * n1 + c1).ravel()
        v10, v01 = v00 + 1, v00 + n1
        v11 = v01 + 1
        # each cell -> lower-left and upper-right triangle, cell-major order
        elems = np.empty((2 * v00.size, 3), dtype=np.int64)
        elems[0::2] = np.column_stack([v00, v10, v01])
        elems[1::2] = np.column_stack([v11, v01, v10])
        return elems

    def _build_element_geometry(self):
        ref = _REF_GRADS[self.dim]
        p0 = self.nodes[self.elements[:, 0]]
        edges = np.stack(
            [self.nodes[self.elements[:, i + 1]] - p0 for i in range(self.dim)],
            axis=-1)  # (ne, dim, dim), Jacobian columns
        det = np.linalg.det(edges)
        if np.any(det <= 0):
            raise ValueError("degenerate element: nonpositive Jacobian determinant")
        self.measures = det / (1.0 if self.dim == 1 else 2.0)
        # grad phi_l = J^{-T} gradref_l
        jt = np.swapaxes(edges, 1, 2)
        rhs = np.broadcast_to(ref.T, (self.n_elements,) + ref.T.shape)
        self.basis_gradients = np.swapaxes(np.linalg.solve(jt, rhs), 1, 2)

    def _lumped_weights(self):
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.elements, (self.measures / (self.dim + 1))[:, None])
        return w

    def check_field(self, values):
        """Validate that ``values`` is a finite nodal field on this grid."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_nodes,):
            raise ValueError(
                f"field has shape {values.shape}, expected ({self.n_nodes},)")
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite entries")
        return values

    def stiffness_matrix(self):
        """Sparse P1 stiffness matrix K_ij = sum_e |e| grad phi_i . grad phi_j."""
        if self._stiffness is None:
            self._stiffness = self.assemble_weighted_stiffness(None)
        return self._stiffness

    def assemble_weighted_stiffness(self, tensors):
        """Assemble sum_e |e| grad phi_i^T M_e grad phi_j as a CSR matrix.

        ``tensors`` is an (n_elements, dim, dim) array of per-element
        matrices M_e, or None for the identity (plain stiffness).
        """
        g = self.basis_gradients
        if tensors is None:
            blocks = np.einsum("eld,emd->elm", g, g)
        else:
            blocks = np.einsum("eld,edc,emc->elm", g, tensors, g)
        blocks = blocks * self.measures[:, None, None]
        mat = sp.coo_matrix(
            (blocks.ravel(), (self._asm_rows, self._asm_cols)),
            shape=(self.n_nodes, self.n_nodes))
        return mat.tocsr()

    def _riesz_matrix(self):
        if self._riesz is None:
            self._riesz = (self.stiffness_matrix()
                           + sp.diags(self.weights)).tocsr()
        return self._riesz


def build_grid(dim, nodes_per_axis, lengths):
    """Build a uniform P1 grid of the box prod_k (0, L_k).

    Parameters
    ----------
    dim : int
        1 or 2.
    nodes_per_axis : sequence of int
        Node counts n_k >= 2 per axis.
    lengths : sequence of float
        Positive box side lengths L_k.
    """
    return Grid(dim, nodes_per_axis, lengths)


def lumped_mass(grid):
    """Diagonal lumped-mass weights; entries sum to the domain volume."""
    return grid.weights.copy()


def element_gradients(grid, values):
    """Constant gradient of the P1 interpolant on every element.

    Exact for nodal data sampled from an affine function.  Returns an
    (n_elements, dim) array.
    """
    return np.einsum("eld,el->ed", grid.basis_gradients,
                     np.asarray(values, dtype=float)[grid.elements])


def assemble_flux_divergence(grid, fluxes):
    """Assemble the nodal vector b_i = sum_e |e| q_e . grad phi_i|_e.

    This is the exact Galerkin divergence-form term for any element-constant
    flux q (both q and grad phi_i are constant per element).  Row sums vanish
    because the basis gradients sum to zero on each element.
    """
    fluxes = np.asarray(fluxes, dtype=float)
    if fluxes.shape != (grid.n_elements, grid.dim):
        raise ValueError(
            f"fluxes have shape {fluxes.shape}, expected "
            f"({grid.n_elements}, {grid.dim})")
    contrib = grid.measures[:, None] * np.einsum(
        "eld,ed->el", grid.basis_gradients, fluxes)
    out = np.zeros(grid.n_nodes)
    np.add.at(out, grid.elements, contrib)
    return out


class FieldNorms(NamedTuple):
    l2: float
    h1_semi: float
    linf: float


def norms(grid, values):
    """Lumped L2 norm, H1 seminorm, and max norm of a nodal field."""
    values = np.asarray(values, dtype=float)
    l2 = float(np.sqrt(np.sum(grid.weights * values**2)))
    grads = element_gradients(grid, values)
    h1_semi = float(np.sqrt(np.sum(grid.measures * np.sum(grads**2, axis=1))))
    linf = float(np.max(np.abs(values))) if values.size else 0.0
    return FieldNorms(l2, h1_semi, linf)


def h1_norm(grid, values):
    """Full H1 norm, sqrt(l2^2 + |.|_H1^2)."""
    n = norms(grid, values)
    return float(np.hypot(n.l2, n.h1_semi))


def dual_norm(grid, values, rtol=1e-10):
    """Discrete dual norm of a field viewed as a functional on H1.

    Solves the Riesz problem (grad z, grad phi) + (z, phi) = (f, phi) for
    all nodal phi (conjugate gradients, relative residual <= rtol) and
    returns sqrt((f, z)).  For f constant the representative is z = f, so
    the value is |f| sqrt(volume); for any f it is bounded by the lumped
    L2 norm.
    """
    values = np.asarray(values, dtype=float)
    rhs = grid.weights * values
    z = conjugate_gradient(grid._riesz_matrix(), rhs, rtol=rtol)
    return float(np.sqrt(max(rhs @ z, 0.0)))


# -- field snapshot files ----------------------------------------------------
#
# Line 1:  # anisoflow-field v1 dim=<d> n=<n1[,n2]> L=<L1[,L2]>
# then one nodal value per line in node order, 17 significant digits.

_FIELD_MAGIC = "# anisoflow-field v1"


def write_field(path, grid, values):
    """Write a nodal field to a snapshot file (round-trips bit-exactly)."""
    values = grid.check_field(values)
    n = ",".join(str(k) for k in grid.shape)
    L = ",".join(f"{x:.17g}" for x in grid.lengths)
    with open(path, "w") as f:
        f.write(f"{_FIELD_MAGIC} dim={grid.dim} n={n} L={L}\n")
        for v in values:
            f.write(f"{v:.17g}\n")


def read_field(path):
    """Read a snapshot file; returns (values, header) with header dict
    holding 'dim', 'shape', 'lengths'."""
    with open(path) as f:
        first = f.readline().rstrip("\n")
        if not first.startswith(_FIELD_MAGIC):
            raise ValueError(f"{path}: not a field snapshot file")
        header = {}
        for token in first[len(_FIELD_MAGIC):].split():
            key, _, val = token.partition("=")
            header[key] = val
        try:
            meta = {
                "dim": int(header["dim"]),
                "shape": tuple(int(s) for s in header["n"].split(",")),
                "lengths": tuple(float(s) for s in header["L"].split(",")),
            }
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: malformed snapshot header") from exc
        values = np.array([float(line) for line in f if line.strip()])
    expected = int(np.prod(meta["shape"]))
    if values.size != expected:
        raise ValueError(
            f"{path}: {values.size} values, header promises {expected}")
    return values, meta


def load_field(path, grid):
    """Read a snapshot and validate it against ``grid``."""
    values, meta = read_field(path)
    if (meta["dim"] != grid.dim or meta["shape"] != grid.shape
            or not np.allclose(meta["lengths"], grid.lengths)):
        raise ValueError(
            f"{path}: snapshot grid {meta} does not match "
            f"dim={grid.dim} n={grid.shape} L={grid.lengths}")
    return grid.check_field(values)


def grid_fingerprint(grid):
    """Short hash of the grid layout, used in run manifests."""
    desc = f"{grid.dim}|{grid.shape}|{grid.lengths}"
    return hashlib.sha256(desc.encode()).hexdigest()[:12]
