"""Geometric control algebra on orthonormal bases.

Subspaces are stored as orthonormal column bases.  Rank decisions use
singular values relative to the largest one (``rank_tol``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NotControlledInvariant

RANK_TOL = 1e-9
FRIEND_TOL = 1e-8


@dataclass(frozen=True)
class Subspace:
    basis: np.ndarray
    ambient_dim: int

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def __repr__(self):
        return f"Subspace(dim={self.dim}, ambient_dim={self.ambient_dim})"


def _sub(basis: np.ndarray, n: int) -> Subspace:
    return Subspace(np.asarray(basis, dtype=float).reshape(n, -1), n)


def _as2d(M) -> np.ndarray:
    return np.atleast_2d(np.asarray(M, dtype=float))


def _orth(M: np.ndarray, rank_tol: float) -> np.ndarray:
    n = M.shape[0]
    if M.size == 0 or not np.any(M):
        return np.zeros((n, 0))
    return sla.orth(M, rcond=rank_tol)


def _null(M: np.ndarray, rank_tol: float) -> np.ndarray:
    n = M.shape[1]
    if M.shape[0] == 0 or not np.any(M):
        return np.eye(n)
    return sla.null_space(M, rcond=rank_tol)


def zero_space(n: int) -> Subspace:
    return _sub(np.zeros((n, 0)), n)


def full_space(n: int) -> Subspace:
    return _sub(np.eye(n), n)


def kernel(M, rank_tol: float = RANK_TOL) -> Subspace:
    M = _as2d(M)
    return _sub(_null(M, rank_tol), M.shape[1])


def image(M, rank_tol: float = RANK_TOL) -> Subspace:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    return _sub(_orth(M, rank_tol), M.shape[0])


def complement(V: Subspace, rank_tol: float = RANK_TOL) -> Subspace:
    """Orthogonal complement."""
    if V.dim == 0:
        return full_space(V.ambient_dim)
    return _sub(_null(V.basis.T, rank_tol), V.ambient_dim)


def sum(U: Subspace, V: Subspace, rank_tol: float = RANK_TOL) -> Subspace:  # noqa: A001
    return image(np.hstack([U.basis, V.basis]).reshape(U.ambient_dim, -1), rank_tol)


def intersect(U: Subspace, V: Subspace, rank_tol: float = RANK_TOL) -> Subspace:
    if U.dim == 0 or V.dim == 0:
        return zero_space(U.ambient_dim)
    # x in U and V  <=>  x orthogonal to both complements
    W = np.hstack([complement(U, rank_tol).basis, complement(V, rank_tol).basis])
    if W.shape[1] == 0:
        return full_space(U.ambient_dim)
    return _sub(_null(W.T, rank_tol), U.ambient_dim)


def preimage(A, V: Subspace, rank_tol: float = RANK_TOL) -> Subspace:
    """``{x : A x in V}``."""
    A = _as2d(A)
    Vp = complement(V, rank_tol).basis
    if Vp.shape[1] == 0:
        return full_space(A.shape[1])
    return _sub(_null(Vp.T @ A, rank_tol), A.shape[1])


def contains(U: Subspace, V: Subspace, tol: float = 1e-8) -> bool:
    """True if ``V`` is a subset of ``U``."""
    if V.dim == 0:
        return True
    resid = V.basis - U.projector @ V.basis if U.dim else V.basis
    return bool(np.linalg.norm(resid) <= tol * max(1.0, np.sqrt(V.dim)))


def is_controlled_invariant(A, B_r, V: Subspace, tol: float = 1e-8) -> bool:
    """Check ``A V subset V + Im B_r``."""
    A = _as2d(A)
    if V.dim == 0:
        return True
    target = sum(V, image(B_r))
    return contains(target, image(A @ V.basis), tol)


def controlled_invariant_iterates(A, B_r, C, rank_tol: float = RANK_TOL) -> list:
    """Sequence ``V_0 = Ker C, V_{k+1} = Ker C & A^{-1}(V_k + Im B_r)`` to its fixed point."""
    A = _as2d(A)
    n = A.shape[0]
    C = np.asarray(C, dtype=float).reshape(-1, n)
    imB = image(np.asarray(B_r, dtype=float).reshape(n, -1), rank_tol)
    kerC = kernel(C, rank_tol) if C.size else full_space(n)
    seq = [kerC]
    for _ in range(n + 1):
        nxt = intersect(kerC, preimage(A, sum(seq[-1], imB, rank_tol), rank_tol), rank_tol)
        seq.append(nxt)
        if nxt.dim == seq[-2].dim:
            break
    return seq


def max_controlled_invariant(A, B_r, C, rank_tol: float = RANK_TOL) -> Subspace:
    """Maximal ``(A, B_r)`` controlled invariant subspace inside ``Ker C``."""
    return controlled_invariant_iterates(A, B_r, C, rank_tol)[-1]


def friend(A, B_r, V: Subspace, tol: float = FRIEND_TOL) -> np.ndarray:
    """A matrix ``F`` with ``(A + B_r F) V`` contained in ``V``.

    ``F`` acts only on ``V``; it is zero on the orthogonal complement.

    Raises
    ------
    NotControlledInvariant
        If ``A v = V w - B_r u`` has no exact solution for some basis vector.
    """
    A = _as2d(A)
    n = A.shape[0]
    B_r = np.asarray(B_r, dtype=float).reshape(n, -1)
    m = B_r.shape[1]
    if V.dim == 0:
        return np.zeros((m, n))
    k = V.dim
    M = np.hstack([V.basis, -B_r])
    rhs = A @ V.basis
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    resid = np.linalg.norm(M @ sol - rhs)
    if resid > tol * max(1.0, np.linalg.norm(A)):
        raise NotControlledInvariant(f"friend residual {resid:.3e} exceeds {tol:.0e}")
    U = sol[k:, :]
    return U @ V.basis.T


@dataclass(frozen=True)
class GeometricDecomposition:
    """System blocks in the coordinates ``x = T xbar`` with ``T = [T1 T2]`` orthogonal."""

    T: np.ndarray
    T1: np.ndarray
    T2: np.ndarray
    A11: np.ndarray
    A12: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    Br1: np.ndarray
    Br2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    Bw1: np.ndarray
    Bw2: np.ndarray
    C2: np.ndarray

    @property
    def k(self) -> int:
        return self.T1.shape[1]

    @property
    def Abar(self) -> np.ndarray:
        return np.block([[self.A11, self.A12], [self.A21, self.A22]])


def decompose(A, B_r, B, B_w, C, V: Subspace, rank_tol: float = RANK_TOL) -> GeometricDecomposition:
    """Split the plant along ``V`` with an orthonormal completion ``T2``.

    ``B`` is the full healthy input map, whose ``T2`` block the matching
    step must reproduce through ``B_r``.
    """
    A = _as2d(A)
    n = A.shape[0]

    def cols(M):
        return np.asarray(M, dtype=float).reshape(n, -1)

    B_r, B, B_w = cols(B_r), cols(B), cols(B_w)
    C = np.asarray(C, dtype=float).reshape(-1, n)
    T1 = V.basis
    T2 = complement(V, rank_tol).basis
    T = np.hstack([T1, T2])
    k = T1.shape[1]
    Ab = T.T @ A @ T
    Brb, Bb, Bwb = T.T @ B_r, T.T @ B, T.T @ B_w
    return GeometricDecomposition(
        T=T, T1=T1, T2=T2,
        A11=Ab[:k, :k], A12=Ab[:k, k:], A21=Ab[k:, :k], A22=Ab[k:, k:],
        Br1=Brb[:k], Br2=Brb[k:], B1=Bb[:k], B2=Bb[k:],
        Bw1=Bwb[:k], Bw2=Bwb[k:], C2=(C @ T)[:, k:],
    )
