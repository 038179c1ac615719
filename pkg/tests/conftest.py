"""Shared independent oracles: plain element-loop assembly with closed-form
local matrices, deliberately separate from the library's vectorized paths."""

import numpy as np


def oracle_mass_matrix(grid):
    """Exact P1 mass matrix via the closed-form element matrices."""
    n = grid.n_nodes
    m = np.zeros((n, n))
    if grid.dim == 1:
        local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    else:
        local = np.array([[2.0, 1.0, 1.0],
                          [1.0, 2.0, 1.0],
                          [1.0, 1.0, 2.0]]) / 12.0
    for conn, measure in zip(grid.elements, grid.measures):
        m[np.ix_(conn, conn)] += measure * local
    return m


def oracle_stiffness_matrix(grid):
    """P1 stiffness via the edge-vector formula (1D: 1/h laplacian stencil)."""
    n = grid.n_nodes
    k = np.zeros((n, n))
    for conn, measure in zip(grid.elements, grid.measures):
        if grid.dim == 1:
            local = np.array([[1.0, -1.0], [-1.0, 1.0]]) / measure
        else:
            p = grid.nodes[conn]
            edges = np.array([p[2] - p[1], p[0] - p[2], p[1] - p[0]])
            local = edges @ edges.T / (4.0 * measure)
        k[np.ix_(conn, conn)] += local
    return k
