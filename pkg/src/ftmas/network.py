"""Leader-follower topology and the scalar coupling coefficients of the consensus law.

Followers are indexed from 0.  An edge ``(j, i)`` means follower ``i``
receives information from follower ``j`` (``g_ij = 1``).  Pinned followers
receive the leader state directly (``g_i0 = 1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MMatrixViolation, NoSpanningTree

C3_SHRINK = 1e-6
U0M_FLOOR = 1e-6


@dataclass(frozen=True)
class Topology:
    n_followers: int
    G: np.ndarray          # follower adjacency, G[i, j] = g_ij
    g0: np.ndarray         # pinning vector g_i0
    edges: tuple = field(default=())
    pins: tuple = field(default=())

    @property
    def d(self) -> np.ndarray:
        """In-degrees including the leader link."""
        return self.G.sum(axis=1) + self.g0

    @property
    def L22(self) -> np.ndarray:
        return np.diag(self.d) - self.G

    @property
    def L21(self) -> np.ndarray:
        return -self.g0.reshape(-1, 1)

    @property
    def L(self) -> np.ndarray:
        """Full Laplacian with the leader as node 0 (leader row zero)."""
        N = self.n_followers
        L = np.zeros((N + 1, N + 1))
        L[1:, :1] = self.L21
        L[1:, 1:] = self.L22
        return L

    @property
    def d0_star(self) -> int:
        return int(self.g0.sum())

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.G[i])


def _reachable_from_leader(G: np.ndarray, g0: np.ndarray) -> np.ndarray:
    seen = g0.astype(bool).copy()
    frontier = list(np.flatnonzero(seen))
    while frontier:
        j = frontier.pop()
        for i in np.flatnonzero(G[:, j]):
            if not seen[i]:
                seen[i] = True
                frontier.append(i)
    return seen


def build_topology(edges, pins, n_followers: int | None = None) -> Topology:
    """Build the follower graph and check for a spanning tree rooted at the leader.

    Raises
    ------
    NoSpanningTree
        If some follower cannot be reached from the leader.
    """
    edges = tuple((int(j), int(i)) for j, i in edges)
    pins = tuple(sorted(int(p) for p in pins))
    idx = [v for e in edges for v in e] + list(pins)
    N = n_followers if n_followers is not None else (max(idx) + 1 if idx else 0)
    if N < 1:
        raise ValueError("topology needs at least one follower")
    if any(v < 0 or v >= N for v in idx):
        raise ValueError(f"follower index out of range 0..{N - 1}")
    G = np.zeros((N, N))
    for j, i in edges:
        if i == j:
            raise ValueError(f"self loop on follower {i}")
        G[i, j] = 1.0
    g0 = np.zeros(N)
    g0[list(pins)] = 1.0
    if not pins:
        raise NoSpanningTree("no follower is pinned to the leader")
    reach = _reachable_from_leader(G, g0)
    if not reach.all():
        raise NoSpanningTree(f"followers {np.flatnonzero(~reach).tolist()} unreachable from the leader")
    return Topology(N, G, g0, edges, pins)


@dataclass(frozen=True)
class CouplingCoefficients:
    C2: np.ndarray
    c3: float
    C0: np.ndarray
    c4: float
    lambda_m: float
    lambda_M: float

    @property
    def c4inv(self) -> float:
        return 1.0 / self.c4

    @property
    def c1(self) -> float:
        return self.c3 / 2.0

    @property
    def c0(self) -> np.ndarray:
        return np.diag(self.C0).copy()


def check_coupling(top: Topology, cc: CouplingCoefficients, u0M: float) -> tuple:
    """Directly evaluate both defining inequalities; returns (matrix_margin, worst_agent_margin)."""
    L22 = top.L22
    M = cc.C2 @ L22.T + L22 @ cc.C2 - cc.c3 * np.eye(top.n_followers)
    mat = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    c0 = cc.c0
    agent = np.array([
        u0M - top.d[i] * c0[i] + c0[top.neighbors(i)].sum() for i in range(top.n_followers)
    ])
    return mat, float(agent.max())


def coupling_gains(top: Topology, u0M: float, safety: float = 1.1, c2_scale: float = 1.0) -> CouplingCoefficients:
    """Positive diagonal ``C2``, ``c3``, ``c_i0`` and ``c4`` for a topology.

    ``C2 = c2_scale * diag(q_i / p_i)`` with ``q = L22^{-1} 1`` and
    ``p = L22^{-T} 1``.  For a nonsingular M-matrix both vectors are
    positive and ``C2 L22^T + L22 C2`` is positive definite.
    ``c3`` is its smallest eigenvalue shrunk by a relative ``1e-6``.
    ``c0 = safety * u0M * L22^{-1} 1`` gives ``L22 c0 = safety * u0M * 1``,
    which satisfies the leader-input domination inequality of every agent.

    Raises
    ------
    MMatrixViolation
        If ``q`` or ``p`` has a nonpositive entry.
    """
    if safety <= 1.0:
        raise ValueError("safety factor must exceed 1")
    if c2_scale <= 0:
        raise ValueError("c2_scale must be positive")
    L22 = top.L22
    N = top.n_followers
    one = np.ones(N)
    q = np.linalg.solve(L22, one)
    p = np.linalg.solve(L22.T, one)
    if np.any(q <= 0) or np.any(p <= 0):
        raise MMatrixViolation("L22 is not a nonsingular M-matrix")
    C2 = c2_scale * np.diag(q / p)
    S = C2 @ L22.T + L22 @ C2
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))[0]
    if lam <= 0:
        raise MMatrixViolation(f"C2 L22^T + L22 C2 not positive definite ({lam:.3e})")
    c3 = lam * (1.0 - C3_SHRINK)
    c0 = safety * max(u0M, U0M_FLOOR) * q
    ev = np.linalg.eigvalsh(L22.T @ L22)
    lambda_m, lambda_M = float(ev[0]), float(ev[-1])
    c4inv = max(1.0, 1.0 / (N * lambda_m))
    return CouplingCoefficients(C2=C2, c3=float(c3), C0=np.diag(c0), c4=1.0 / c4inv,
                                lambda_m=lambda_m, lambda_M=lambda_M)
