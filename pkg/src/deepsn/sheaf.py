"""Cellular sheaves on graphs and the coefficient-weighted sheaf Laplacian.

Stacked vertex features use vertex-major order: rows ``v*d .. v*d + d - 1``
hold the stalk of vertex ``v``.  All operators are scipy sparse matrices
assembled from d x d blocks; nothing here densifies an (nd) x (nd) matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .graph import Graph

SYM_TOL = 1e-10
EIG_TOL = 1e-12
PIVOT_TOL = 1e-10  # relative; smaller Cholesky pivots mean numerically singular


class NotPositiveDefinite(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Sheaf:
    """Restriction maps and sheaf coefficients over a graph.

    ``restriction[e, 0]`` is the map of the lower endpoint ``graph.edges[e, 0]``
    into the stalk of edge ``e``; ``restriction[e, 1]`` that of the upper one.
    """

    graph: Graph
    stalk_dim: int
    restriction: np.ndarray  # (m, 2, d, d)
    coeff: np.ndarray  # (m,)

    def __post_init__(self):
        m, d = self.graph.m, self.stalk_dim
        if self.restriction.shape != (m, 2, d, d):
            raise ValueError(f"restriction maps must have shape {(m, 2, d, d)}, got {self.restriction.shape}")
        if self.coeff.shape != (m,):
            raise ValueError(f"coefficients must have shape {(m,)}")
        if not np.all(np.isfinite(self.restriction)):
            raise ValueError("restriction maps must be finite")
        if np.any(self.coeff < 0) or np.any(self.coeff > 1):
            raise ValueError("sheaf coefficients must lie in [0, 1]")

    @classmethod
    def identity(cls, g: Graph, d: int = 1, coeff=1.0) -> "Sheaf":
        maps = np.broadcast_to(np.eye(d), (g.m, 2, d, d)).copy()
        return cls(g, d, maps, np.broadcast_to(np.asarray(coeff, float), (g.m,)).copy())

    @classmethod
    def random(cls, g: Graph, d: int, rng: np.random.Generator, symmetric: bool = False) -> "Sheaf":
        maps = rng.normal(size=(g.m, 2, d, d))
        if symmetric:
            maps[:, 1] = maps[:, 0]
        return cls(g, d, maps, rng.uniform(size=g.m))


@dataclass(frozen=True, eq=False)
class SheafOperator:
    laplacian: sp.csr_matrix
    epsilon: float
    shifted: sp.csr_matrix
    block_diag: np.ndarray  # (n, d, d) diagonal blocks of the normalized-over matrix
    normalized: sp.csr_matrix | None
    stalk_dim: int

    @property
    def delta(self) -> sp.csr_matrix:
        """The operator that drives diffusion (normalized if available)."""
        return self.normalized if self.normalized is not None else self.shifted


def _as_blocks(x: np.ndarray, n: int, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != n * d:
        raise ValueError(f"expected {n * d} rows, got {x.shape[0]}")
    return x.reshape(n, d, -1)


def coboundary_apply(s: Sheaf, x: np.ndarray) -> np.ndarray:
    """Edge-wise disagreement ``F_{v<e} x_v - F_{u<e} x_u``, shape (m, d, f)."""
    squeeze = np.ndim(x) == 1
    xb = _as_blocks(x if not squeeze else np.reshape(x, (-1, 1)), s.graph.n, s.stalk_dim)
    u, v = s.graph.edges[:, 0], s.graph.edges[:, 1]
    out = s.restriction[:, 0] @ xb[u] - s.restriction[:, 1] @ xb[v]
    return out[..., 0] if squeeze else out


def _block_matrix(n: int, d: int, rows, cols, blocks) -> sp.csr_matrix:
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    ii = (rows[:, None, None] * d + np.arange(d)[None, :, None]) + np.zeros((1, 1, d), int)
    jj = (cols[:, None, None] * d + np.arange(d)[None, None, :]) + np.zeros((1, d, 1), int)
    mat = sp.coo_matrix((np.asarray(blocks).ravel(), (ii.ravel(), jj.ravel())), shape=(n * d, n * d))
    return mat.tocsr()


def laplacian_blocks(s: Sheaf) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal blocks (n, d, d) and per-edge off-diagonal blocks (m, d, d) of L_F.

    The off-diagonal block returned for edge e = (u, v) is the (u, v) block;
    the (v, u) block is its transpose.
    """
    g, d = s.graph, s.stalk_dim
    fu, fv = s.restriction[:, 0], s.restriction[:, 1]
    psi = s.coeff[:, None, None]
    ft = lambda a: np.swapaxes(a, -1, -2)
    diag = np.zeros((g.n, d, d))
    np.add.at(diag, g.edges[:, 0], psi * ft(fu) @ fu)
    np.add.at(diag, g.edges[:, 1], psi * ft(fv) @ fv)
    off = -psi * ft(fu) @ fv
    return diag, off


def assemble_laplacian(s: Sheaf) -> sp.csr_matrix:
    g, d = s.graph, s.stalk_dim
    diag, off = laplacian_blocks(s)
    u, v = g.edges[:, 0], g.edges[:, 1]
    idx = np.arange(g.n)
    rows = np.concatenate([idx, u, v])
    cols = np.concatenate([idx, v, u])
    blocks = np.concatenate([diag, off, np.swapaxes(off, -1, -2)])
    lap = _block_matrix(g.n, d, rows, cols, blocks)
    lap.sum_duplicates()
    return lap


def shift(lap: sp.spmatrix, epsilon: float) -> sp.csr_matrix:
    """L + eps * I; the identity enters only on the diagonal."""
    if not np.isfinite(epsilon):
        raise ValueError("epsilon must be finite")
    return (lap + epsilon * sp.identity(lap.shape[0], format="csr")).tocsr()


def is_positive_definite(mat) -> bool:
    """Cholesky test; raises on a non-symmetric input.

    A factorization whose smallest squared pivot is below ``PIVOT_TOL``
    times the largest entry counts as singular, not definite.
    """
    dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)
    if dense.shape[0] != dense.shape[1]:
        raise ValueError("matrix must be square")
    if dense.size == 0:
        return True
    scale = max(1.0, float(np.max(np.abs(dense))))
    if np.max(np.abs(dense - dense.T)) > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")
    try:
        chol = scipy.linalg.cholesky(dense, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        return False
    return bool(np.min(np.diag(chol)) ** 2 > PIVOT_TOL * scale)


def lambda_min(mat) -> float:
    dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)
    return float(np.linalg.eigvalsh(dense)[0])


def block_inv_sqrt(blocks: np.ndarray) -> np.ndarray:
    """Inverse symmetric square root of a stack of SPD d x d blocks."""
    blocks = np.asarray(blocks, dtype=float)
    d = blocks.shape[-1]
    if d == 1:
        if np.any(blocks[..., 0, 0] <= EIG_TOL):
            raise NotPositiveDefinite("diagonal block is not positive definite")
        return 1.0 / np.sqrt(blocks)
    if d == 2:
        a, b, c = blocks[..., 0, 0], 0.5 * (blocks[..., 0, 1] + blocks[..., 1, 0]), blocks[..., 1, 1]
        half_tr = 0.5 * (a + c)
        rad = np.sqrt((0.5 * (a - c)) ** 2 + b * b)
        lo, hi = half_tr - rad, half_tr + rad
        if np.any(lo <= EIG_TOL):
            raise NotPositiveDefinite("diagonal block is not positive definite")
        # sqrt(M) = (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det)); invert the 2x2 result
        sdet = np.sqrt(lo * hi)
        t = np.sqrt(a + c + 2 * sdet)
        r00, r01, r11 = (a + sdet) / t, b / t, (c + sdet) / t
        det_r = r00 * r11 - r01 * r01
        out = np.empty(blocks.shape)
        out[..., 0, 0] = r11 / det_r
        out[..., 1, 1] = r00 / det_r
        out[..., 0, 1] = out[..., 1, 0] = -r01 / det_r
        return out
    w, q = np.linalg.eigh(0.5 * (blocks + np.swapaxes(blocks, -1, -2)))
    if np.any(w <= EIG_TOL):
        raise NotPositiveDefinite("diagonal block is not positive definite")
    return (q / np.sqrt(w)[..., None, :]) @ np.swapaxes(q, -1, -2)


def diagonal_blocks(mat: sp.spmatrix, n: int, d: int) -> np.ndarray:
    coo = sp.coo_matrix(mat)
    keep = coo.row // d == coo.col // d
    out = np.zeros((n, d, d))
    np.add.at(out, (coo.row[keep] // d, coo.row[keep] % d, coo.col[keep] % d), coo.data[keep])
    return out


def build_operator(
    s: Sheaf, epsilon: float = 1.0, normalize: bool = True, normalize_shifted: bool = True
) -> SheafOperator:
    """Assemble L_F, its shift, and (optionally) the normalized diffusion operator.

    ``normalize_shifted=False`` takes D from the raw L_F instead of L_F + eps I,
    for harmonic fixed-point studies with eps = 0.
    """
    lap = assemble_laplacian(s)
    shifted = shift(lap, epsilon)
    base = shifted if normalize_shifted else lap
    blocks = diagonal_blocks(base, s.graph.n, s.stalk_dim)
    op = SheafOperator(lap, float(epsilon), shifted, blocks, None, s.stalk_dim)
    return _normalize(op, normalize_shifted) if normalize else op


def _normalize(op: SheafOperator, normalize_shifted: bool = True) -> SheafOperator:
    n = op.block_diag.shape[0]
    d = op.stalk_dim
    dinv = _block_matrix(n, d, np.arange(n), np.arange(n), block_inv_sqrt(op.block_diag))
    target = op.shifted if normalize_shifted else op.laplacian
    delta = (dinv @ target @ dinv).tocsr()
    delta = (0.5 * (delta + delta.T)).tocsr()
    return SheafOperator(op.laplacian, op.epsilon, op.shifted, op.block_diag, delta, d)


def normalize(op: SheafOperator) -> SheafOperator:
    """D^{-1/2} (L_F + eps I) D^{-1/2} with D the block diagonal of the shifted operator."""
    return _normalize(op, True)


def apply_delta(op: SheafOperator, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    mat = op.delta
    if x.shape[0] != mat.shape[1]:
        raise ValueError(f"feature matrix has {x.shape[0]} rows, operator expects {mat.shape[1]}")
    return mat @ x
