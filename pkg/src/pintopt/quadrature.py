"""Lobatto IIIA collocation nodes and the matrices SDC sweeps are built from."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre

MIN_NODES = 2
MAX_NODES = 12


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Collocation rule on the unit interval.

    ``Q[m, i]`` integrates the i-th Lagrange basis polynomial from 0 to
    ``nodes[m]``.  ``QI`` is the lower-triangular implicit correction matrix
    (LU trick), ``QE`` the strictly lower-triangular forward-Euler matrix.
    """

    num_nodes: int
    nodes: np.ndarray
    Q: np.ndarray
    QI: np.ndarray
    QE: np.ndarray

    @property
    def M(self) -> int:
        return self.num_nodes - 1

    @property
    def weights(self) -> np.ndarray:
        """Full-step quadrature weights (last row of ``Q``)."""
        return self.Q[-1]

    def __repr__(self) -> str:
        return f"QuadratureRule(num_nodes={self.num_nodes})"


def lobatto_nodes(num_nodes: int, tol: float = 1e-15) -> np.ndarray:
    """Gauss-Lobatto points on [0, 1].

    Interior points are the roots of P'_M, found by Newton iteration from
    Chebyshev-Gauss-Lobatto initial guesses.
    """
    M = num_nodes - 1
    if M == 1:
        return np.array([0.0, 1.0])
    coef = np.zeros(M + 1)
    coef[M] = 1.0
    d1 = legendre.legder(coef)
    d2 = legendre.legder(d1)
    x = -np.cos(np.pi * np.arange(1, M) / M)
    for _ in range(100):
        step = legendre.legval(x, d1) / legendre.legval(x, d2)
        x = x - step
        if np.max(np.abs(step)) < tol:
            break
    # symmetrize to kill round-off asymmetry
    x = 0.5 * (x - x[::-1])
    t = np.concatenate(([0.0], 0.5 * (x + 1.0), [1.0]))
    return t


def _lagrange_values(nodes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Matrix L[p, i] = l_i(points[p]) for the Lagrange basis on ``nodes``."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    n = len(nodes)
    out = np.ones((len(points), n))
    for i in range(n):
        for k in range(n):
            if k != i:
                out[:, i] *= (points - nodes[k]) / (nodes[i] - nodes[k])
    return out


def lagrange_matrix(src_nodes: np.ndarray, dst_points: np.ndarray) -> np.ndarray:
    """Evaluate the interpolant through ``src_nodes`` at ``dst_points``.

    Exact copies are enforced where a destination point coincides with a
    source node, so nested node sets give pointwise injection.
    """
    src_nodes = np.asarray(src_nodes, dtype=float)
    dst_points = np.atleast_1d(np.asarray(dst_points, dtype=float))
    L = _lagrange_values(src_nodes, dst_points)
    for p, x in enumerate(dst_points):
        hit = np.flatnonzero(np.abs(src_nodes - x) < 1e-14)
        if hit.size:
            L[p] = 0.0
            L[p, hit[0]] = 1.0
    return L


def integration_matrix(src_nodes: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """W[p, i] = integral of the i-th Lagrange basis (on ``src_nodes``) over [0, upper[p]].

    Gauss-Legendre with as many points as basis functions is exact here.
    """
    src_nodes = np.asarray(src_nodes, dtype=float)
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    gx, gw = legendre.leggauss(len(src_nodes))
    W = np.zeros((len(upper), len(src_nodes)))
    for p, b in enumerate(upper):
        if b == 0.0:
            continue
        xs = 0.5 * b * (gx + 1.0)
        W[p] = 0.5 * b * gw @ _lagrange_values(src_nodes, xs)
    return W


def _lu_correction(Q: np.ndarray) -> np.ndarray:
    # Doolittle LU of Q[1:,1:]^T without pivoting; QI[1:,1:] = U^T
    A = Q[1:, 1:].T.copy()
    n = A.shape[0]
    U = np.zeros_like(A)
    L = np.eye(n)
    for k in range(n):
        U[k, k:] = A[k, k:] - L[k, :k] @ U[:k, k:]
        L[k + 1:, k] = (A[k + 1:, k] - L[k + 1:, :k] @ U[:k, k]) / U[k, k]
    QI = np.zeros_like(Q)
    QI[1:, 1:] = U.T
    return QI


def build_lobatto_rule(num_nodes: int) -> QuadratureRule:
    """Build the Lobatto IIIA rule with ``num_nodes`` points (2 to 12)."""
    if not isinstance(num_nodes, (int, np.integer)) or not MIN_NODES <= num_nodes <= MAX_NODES:
        raise ValueError(f"num_nodes must be an integer in [{MIN_NODES}, {MAX_NODES}], got {num_nodes!r}")
    num_nodes = int(num_nodes)
    nodes = lobatto_nodes(num_nodes)
    Q = integration_matrix(nodes, nodes)

    QI = _lu_correction(Q)
    # node-0 column makes QI rows sum to the node values; it only acts when
    # the initial value changes between sweeps
    QI[:, 0] = nodes - QI[:, 1:].sum(axis=1)

    QE = np.zeros_like(Q)
    h = np.diff(nodes)
    for m in range(1, num_nodes):
        QE[m, :m] = h[:m]

    for A in (Q, QI, QE, nodes):
        A.setflags(write=False)
    return QuadratureRule(num_nodes=num_nodes, nodes=nodes, Q=Q, QI=QI, QE=QE)


def node_interpolation_matrix(fine: QuadratureRule, coarse: QuadratureRule) -> np.ndarray:
    """Interpolate values at coarse nodes to fine nodes, shape (fine, coarse)."""
    if coarse.num_nodes > fine.num_nodes:
        raise ValueError("coarse rule has more nodes than fine rule")
    return lagrange_matrix(coarse.nodes, fine.nodes)


def node_restriction_matrix(fine: QuadratureRule, coarse: QuadratureRule) -> np.ndarray:
    """Evaluate the fine-node interpolant at coarse nodes, shape (coarse, fine)."""
    return lagrange_matrix(fine.nodes, coarse.nodes)


def apply_nodes(A: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Contract a node matrix with node-stacked fields: out[p] = sum_i A[p, i] values[i]."""
    n = values.shape[0]
    return (A @ values.reshape(n, -1)).reshape((A.shape[0],) + values.shape[1:])
