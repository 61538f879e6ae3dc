"""Healthy-team consensus synthesis and the distributed control law.

Each follower runs a virtual auxiliary copy of the plant.  Auxiliary states
are exchanged with neighbours and driven to the leader by

    u_a,i = c_2i K e_a,i + c_i0 sat(K e_a,i / phi),

while the physical agent tracks its auxiliary copy through ``c1 K xi_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible
from .matops import riccati_lhs, solve_h_inf_riccati
from .network import CouplingCoefficients, Topology, check_coupling, coupling_gains
from .plant import AgentModel

DEFAULT_PHI = 1e-3


@dataclass(frozen=True)
class HealthyGains:
    P: np.ndarray
    K: np.ndarray
    coupling: CouplingCoefficients
    gamma: float
    d0: float
    margin_eps: float
    riccati_margin: float
    u0M: float

    @property
    def c1(self) -> float:
        return self.coupling.c1

    @property
    def K1(self) -> np.ndarray:
        return self.c1 * self.K

    def K2(self, i: int) -> np.ndarray:
        return self.coupling.C2[i, i] * self.K

    @property
    def c2(self) -> np.ndarray:
        return np.diag(self.coupling.C2).copy()

    @property
    def c0(self) -> np.ndarray:
        return self.coupling.c0


def synthesize_healthy(
    model: AgentModel, top: Topology, u0M: float, gamma: float,
    safety: float = 1.1, c2_scale: float = 1.0, margin_eps: float = 1e-6,
    gamma_rel_tol: float = 1e-3, gamma_max: float = 1e12,
) -> HealthyGains:
    """Consensus gains with the H-infinity bound ``gamma``.

    If the Riccati inequality has no solution at ``gamma`` the bound is
    raised by doubling and then bisected back down; the smallest feasible
    value (within ``gamma_rel_tol``) is returned in ``HealthyGains.gamma``.

    Raises
    ------
    Infeasible
        If no bound up to ``gamma_max`` works.
    NoSpanningTree, MMatrixViolation
        From the topology checks.
    """
    cc = coupling_gains(top, u0M, safety=safety, c2_scale=c2_scale)
    d0 = float(top.d0_star)
    A, B, Bw = model.A, model.B, model.B_w

    def attempt(g):
        try:
            return solve_h_inf_riccati(A, B, Bw, cc.c3, cc.c4inv, g, d0, margin_eps)
        except Infeasible:
            return None

    P = attempt(gamma)
    g_ok = gamma
    if P is None:
        lo, hi = gamma, gamma * 2.0
        P = attempt(hi)
        while P is None:
            lo, hi = hi, hi * 2.0
            if hi > gamma_max:
                raise Infeasible(f"Riccati inequality infeasible for every gamma up to {gamma_max:g}")
            P = attempt(hi)
        while hi / lo - 1.0 > gamma_rel_tol:
            mid = np.sqrt(lo * hi)
            Pm = attempt(mid)
            if Pm is None:
                lo = mid
            else:
                hi, P = mid, Pm
        g_ok = hi
    lhs = riccati_lhs(A, B, Bw, P, cc.c3, cc.c4inv, g_ok, d0)
    return HealthyGains(
        P=P, K=-B.T @ P, coupling=cc, gamma=float(g_ok), d0=d0, margin_eps=margin_eps,
        riccati_margin=float(np.linalg.eigvalsh(lhs)[-1]), u0M=float(u0M),
    )


def certify_healthy(model: AgentModel, top: Topology, g: HealthyGains) -> dict:
    """Re-evaluate every defining inequality of the healthy design by substitution."""
    cc = g.coupling
    lhs = riccati_lhs(model.A, model.B, model.B_w, g.P, cc.c3, cc.c4inv, g.gamma, g.d0)
    mat, agent = check_coupling(top, cc, g.u0M)
    Acl = model.A + g.c1 * model.B @ g.K
    return {
        "riccati_lambda_max": float(np.linalg.eigvalsh(lhs)[-1]),
        "P_lambda_min": float(np.linalg.eigvalsh(g.P)[0]),
        "coupling_matrix_margin": mat,
        "leader_domination_margin": agent,
        "K_is_minus_BtP": bool(np.array_equal(g.K, -model.B.T @ g.P)),
        "tracking_max_real": float(np.max(np.linalg.eigvals(Acl).real)),
    }


def sat(v, phi: float) -> np.ndarray:
    """Unit saturation of ``v / phi``; the boundary-layer replacement for ``sign``."""
    return np.clip(np.asarray(v, dtype=float) / phi, -1.0, 1.0)


def aux_control(g: HealthyGains, i: int, e_a_i, phi: float = DEFAULT_PHI) -> np.ndarray:
    Ke = g.K @ np.asarray(e_a_i, dtype=float)
    return g.coupling.C2[i, i] * Ke + g.c0[i] * sat(Ke, phi)


def healthy_control(g: HealthyGains, i: int, xi_i, e_a_i, phi: float = DEFAULT_PHI,
                    c_i0: float | None = None) -> np.ndarray:
    """``u_i = c1 K xi_i + c_2i K e_a,i + c_i0 sat(K e_a,i / phi)``."""
    Ke = g.K @ np.asarray(e_a_i, dtype=float)
    c0 = g.c0[i] if c_i0 is None else c_i0
    return g.K1 @ np.asarray(xi_i, dtype=float) + g.coupling.C2[i, i] * Ke + c0 * sat(Ke, phi)


def disagreement(top: Topology, x_a, x0) -> np.ndarray:
    """Auxiliary disagreement errors, one row per follower: ``(L22 kron I)(x_a - 1 kron x0)``."""
    x_a = np.atleast_2d(np.asarray(x_a, dtype=float))
    return top.L22 @ (x_a - np.asarray(x0, dtype=float)[None, :])


def auxiliary_dynamics(g: HealthyGains, model: AgentModel, top: Topology, x_a, x0,
                       phi: float = DEFAULT_PHI) -> tuple:
    """Time derivatives of the auxiliary states and the disagreement errors.

    Returns ``(dx_a, e_a)`` with one row per follower.
    """
    x_a = np.atleast_2d(np.asarray(x_a, dtype=float))
    e_a = disagreement(top, x_a, x0)
    u_a = np.array([aux_control(g, i, e_a[i], phi) for i in range(top.n_followers)])
    return x_a @ model.A.T + u_a @ model.B.T, e_a
