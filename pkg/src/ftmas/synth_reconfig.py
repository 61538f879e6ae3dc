"""Reconfigured control for a faulty agent via the geometric approach.

Design steps:

1. maximal ``(A, B_r)`` controlled invariant subspace ``V*`` inside ``Ker C``;
2. orthogonal ``T = [T1 T2]`` with ``Im T1 = V*``;
3. state gain ``K1r`` from an H-infinity LMI whose equality constraint
   ``A21 X1 + Br2 Y1 = 0`` is eliminated by ``Y1 = Kp X1 + N W``
   (``Kp`` a particular friend, ``N`` a basis of ``Ker Br2``);
4. ``K2r`` from the matching equation ``Br2 K2r = B2``;
5. stuck compensation ``u_C`` from ``B_r u_C = -B_s u_s``.

The reconfigured law is ``u_r = K1r xi_f + K2r u_a + u_C``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (
    DegenerateSubspaceWarning,
    FriendResidualWarning,
    MaxIterExceeded,
    NotStabilizable,
)
from .matops import FEAS_TOL, LmiVariable, h_inf_norm, lmi_margin, maximize_alpha
from .plant import (
    LOE,
    OUTAGE,
    STUCK,
    ActuatorMode,
    AgentModel,
    FaultPartition,
    FaultSpec,
    assemble_fault,
    healthy_modes,
)
from .subspaces import GeometricDecomposition, decompose, max_controlled_invariant

EXACT_TOL = 1e-8
DEFAULT_POLE_RADIUS = 50.0

# state-feedback designs keyed by plant, B_r and solver settings
_DESIGN_CACHE: dict = {}


@dataclass
class ReconfigGains:
    decomposition: GeometricDecomposition
    partition: FaultPartition
    K1r: np.ndarray
    K2r: np.ndarray
    u_C: np.ndarray
    alpha: float
    gamma_f: float
    X1: np.ndarray
    X2: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    matching_residual: float
    stuck_residual: float
    friend_residual: float
    lmi_margin: float
    method: str = "lmi"
    pole_radius: float | None = DEFAULT_POLE_RADIUS
    closed_loop: np.ndarray = field(default=None, repr=False)

    @property
    def exact(self) -> bool:
        return self.matching_residual <= EXACT_TOL and self.stuck_residual <= EXACT_TOL

    @property
    def slowest_pole(self) -> float:
        return float(np.max(np.linalg.eigvals(self.closed_loop).real))


def solve_matching(dec: GeometricDecomposition) -> tuple:
    """Minimum-norm least-squares ``K2r`` for ``Br2 K2r = B2`` and its residual."""
    m_r, m = dec.Br2.shape[1], dec.B2.shape[1]
    if dec.Br2.shape[0] == 0:
        return np.zeros((m_r, m)), 0.0
    K2r = np.linalg.pinv(dec.Br2) @ dec.B2
    return K2r, float(np.linalg.norm(dec.Br2 @ K2r - dec.B2))


def stuck_compensation(B_r: np.ndarray, B_s: np.ndarray, u_s: np.ndarray) -> tuple:
    """Minimum-norm ``u_C`` with ``B_r u_C = -B_s u_s`` in least squares; returns ``(u_C, residual)``."""
    m_r = B_r.shape[1]
    u_s = np.asarray(u_s, dtype=float).ravel()
    if u_s.size == 0 or not np.any(u_s):
        return np.zeros(m_r), 0.0
    target = -B_s @ u_s
    u_C = np.linalg.pinv(B_r) @ target
    return u_C, float(np.linalg.norm(B_r @ u_C - target))


def solve_stuck(part: FaultPartition, u_s=None) -> tuple:
    """Stuck compensation for a partition.

    ``part`` should come from ``assemble_fault(..., use_estimates=True)``
    so that ``part.u_s`` holds the FDI estimates; ``u_s`` overrides them.
    """
    u = part.u_s if u_s is None else np.asarray(u_s, dtype=float)
    if np.any(np.isnan(u)):
        raise ValueError("stuck values unknown; pass u_s explicitly")
    return stuck_compensation(part.B_r, part.B_s, u)


def _theta_blocks(dec: GeometricDecomposition, Kp, N, pole_radius):
    """Block expressions of the reconfiguration LMI as a function of alpha."""
    k = dec.k
    nk = dec.A22.shape[0]
    r = N.shape[1]

    def Y1_of(v):
        Y1 = Kp @ v["X1"]
        if r:
            Y1 = Y1 + N @ v["W"]
        return Y1

    def AcX(v):
        X1, X2, Y2 = v["X1"], v["X2"], v["Y2"]
        Y1 = Y1_of(v)
        top = np.hstack([dec.A11 @ X1 + dec.Br1 @ Y1, dec.A12 @ X2 + dec.Br1 @ Y2])
        bot = np.hstack([dec.A21 @ X1 + dec.Br2 @ Y1, dec.A22 @ X2 + dec.Br2 @ Y2])
        return np.vstack([top, bot]).reshape(k + nk, k + nk)

    def Xfull(v):
        return sla.block_diag(v["X1"], v["X2"])

    Bw = np.vstack([dec.Bw1, dec.Bw2])

    def build(alpha):
        def hinf(v):
            M = AcX(v)
            X = Xfull(v)
            Theta = M + M.T + alpha * Bw @ Bw.T
            I = np.eye(X.shape[0])
            return np.block([[Theta, X], [X, -I]])

        blocks = [hinf]
        if pole_radius is not None:
            def disk(v):
                M = AcX(v)
                X = Xfull(v)
                return np.block([[-pole_radius * X, M], [M.T, -pole_radius * X]])
            blocks.append(disk)
        return blocks

    return build, Y1_of


def _lqr(A, B):
    n = A.shape[0]
    if n == 0:
        return np.zeros((B.shape[1], 0))
    P = sla.solve_continuous_are(A, B, np.eye(n), np.eye(B.shape[1]))
    return -B.T @ P


def _pole_placement_fallback(dec, Kp, N):
    """Block-triangular stabilization: LQR on the ``V*`` block and on the quotient."""
    k = dec.k
    A11c = dec.A11 + dec.Br1 @ Kp
    if k and N.shape[1]:
        try:
            F = _lqr(A11c, dec.Br1 @ N)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NotStabilizable(f"internal dynamics of V* not stabilizable: {exc}") from exc
        K11 = Kp + N @ F
    else:
        K11 = Kp
    try:
        K12 = _lqr(dec.A22, dec.Br2)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotStabilizable(f"quotient dynamics not stabilizable: {exc}") from exc
    return K11, K12


def _state_feedback(model: AgentModel, B_r: np.ndarray, pole_radius, feas_tol, max_iter, rel_width):
    """State-feedback part of the design; depends only on the plant and ``B_r``."""
    A, B, C, Bw = model.A, model.B, model.C, model.B_w
    warns = []
    V = max_controlled_invariant(A, B_r, C)
    if V.dim == 0:
        warns.append(("maximal controlled invariant subspace is trivial", DegenerateSubspaceWarning))
    dec = decompose(A, B_r, B, Bw, C, V)
    k, nk, m_r = dec.k, dec.A22.shape[0], B_r.shape[1]

    if nk:
        Kp = -np.linalg.pinv(dec.Br2) @ dec.A21
        N = sla.null_space(dec.Br2, rcond=1e-9) if np.any(dec.Br2) else np.eye(m_r)
        friend_res = float(np.linalg.norm(dec.A21 + dec.Br2 @ Kp))
    else:
        Kp = np.zeros((m_r, k))
        N = np.eye(m_r)
        friend_res = 0.0
    if friend_res > EXACT_TOL:
        warns.append((f"friend equation residual {friend_res:.3e}", FriendResidualWarning))

    variables = []
    if k:
        variables.append(LmiVariable("X1", (k, k), positive=True))
        if N.shape[1]:
            variables.append(LmiVariable("W", (N.shape[1], k)))
    if nk:
        variables += [LmiVariable("X2", (nk, nk), positive=True), LmiVariable("Y2", (m_r, nk))]

    def fill(v):
        v = dict(v)
        v.setdefault("X1", np.zeros((k, k)))
        v.setdefault("X2", np.zeros((nk, nk)))
        v.setdefault("Y2", np.zeros((m_r, nk)))
        v.setdefault("W", np.zeros((N.shape[1], k)))
        return v

    build, Y1_of = _theta_blocks(dec, Kp, N, pole_radius)

    def build_filled(alpha):
        return [lambda v, f=f: f(fill(v)) for f in build(alpha)]

    method = "lmi"
    try:
        sol = maximize_alpha(build_filled, variables, rel_width=rel_width,
                             feas_tol=feas_tol, max_iter=max_iter)
        v = fill(sol.variables)
        X1, X2, Y2 = v["X1"], v["X2"], v["Y2"]
        Y1 = Y1_of(v)
        K11 = Y1 @ np.linalg.inv(X1) if k else np.zeros((m_r, 0))
        K12 = Y2 @ np.linalg.inv(X2) if nk else np.zeros((m_r, 0))
        alpha = float(sol.objective)
        margin = lmi_margin(build_filled(alpha), sol.variables)
    except MaxIterExceeded:
        sol = None

    Tinv = dec.T.T
    if sol is not None:
        K1r = np.hstack([K11, K12]) @ Tinv
        Acl = A + B_r @ K1r
        if np.max(np.linalg.eigvals(Acl).real) >= 0:
            sol = None
    if sol is None:
        method = "pole_placement"
        K11, K12 = _pole_placement_fallback(dec, Kp, N)
        K1r = np.hstack([K11, K12]) @ Tinv
        Acl = A + B_r @ K1r
        if np.max(np.linalg.eigvals(Acl).real) >= 0:
            raise NotStabilizable("fallback design failed to stabilize A + B_r K1r")
        gnorm = h_inf_norm(Acl, Bw, np.eye(model.n))
        alpha = 1.0 / gnorm**2 if gnorm > 0 else np.inf
        X1 = X2 = Y1 = Y2 = None
        margin = np.nan

    return dec, K1r, Acl, alpha, X1, X2, Y1, Y2, margin, method, friend_res, tuple(warns)


def synthesize_reconfig(
    model: AgentModel, part: FaultPartition, pole_radius: float | None = DEFAULT_POLE_RADIUS,
    feas_tol: float = FEAS_TOL, max_iter: int = 3000, rel_width: float = 1e-6,
) -> ReconfigGains:
    """Reconfigured gains for one faulty agent.

    ``part`` is the partition designed against (normally built from the FDI
    estimates).  ``pole_radius`` adds the constraint that closed-loop poles
    lie in a disk of that radius, which keeps the gains bounded; ``None``
    drops it.

    Raises
    ------
    NotStabilizable
        If neither the LMI nor the fallback yields a Hurwitz closed loop.

    Warns
    -----
    DegenerateSubspaceWarning
        ``V*`` is trivial; output zeroing is impossible.
    FriendResidualWarning
        ``A21`` is not in the range of ``Br2``; the friend is least squares.
    """
    B_r = part.B_r
    if not model.is_stabilizable(B_r):
        raise NotStabilizable("(A, B_r) is not stabilizable")
    key = tuple(np.ascontiguousarray(M).tobytes() + str(M.shape).encode()
                for M in (model.A, model.B, model.C, model.B_w, B_r))
    key += (pole_radius, feas_tol, max_iter, rel_width)
    if key not in _DESIGN_CACHE:
        _DESIGN_CACHE[key] = _state_feedback(model, B_r, pole_radius, feas_tol, max_iter, rel_width)
    dec, K1r, Acl, alpha, X1, X2, Y1, Y2, margin, method, friend_res, warns = _DESIGN_CACHE[key]
    for msg, cat in warns:
        warnings.warn(msg, cat)
    K2r, match_res = solve_matching(dec)
    if part.n_s and not np.any(np.isnan(part.u_s)):
        u_C, stuck_res = stuck_compensation(B_r, part.B_s, part.u_s)
    else:
        u_C, stuck_res = np.zeros(B_r.shape[1]), 0.0
    # T orthogonal: lambda_min((T T^T)^{-1}) = 1
    lam = float(np.linalg.eigvalsh(np.linalg.inv(dec.T @ dec.T.T))[0])
    gamma_f = float(np.sqrt(1.0 / (alpha * lam))) if np.isfinite(alpha) else 0.0
    return ReconfigGains(
        decomposition=dec, partition=part, K1r=K1r.copy(), K2r=K2r, u_C=u_C, alpha=alpha,
        gamma_f=gamma_f, X1=X1, X2=X2, Y1=Y1, Y2=Y2, matching_residual=match_res,
        stuck_residual=stuck_res, friend_residual=friend_res, lmi_margin=margin,
        method=method, pole_radius=pole_radius, closed_loop=Acl.copy(),
    )


def with_stuck_values(g: ReconfigGains, u_s) -> ReconfigGains:
    """Copy of ``g`` with ``u_C`` recomputed for the given stuck estimates."""
    part = g.partition
    u_C, res = stuck_compensation(part.B_r, part.B_s, u_s)
    out = ReconfigGains(**{**g.__dict__})
    out.u_C, out.stuck_residual = u_C, res
    return out


def reconfigured_command(g: ReconfigGains, xi_f, u_a) -> np.ndarray:
    """``u_r = K1r xi_f + K2r u_a + u_C`` on the remaining actuators."""
    return g.K1r @ np.asarray(xi_f, dtype=float) + g.K2r @ np.asarray(u_a, dtype=float) + g.u_C


def reconfigured_control(g: ReconfigGains, xi_f, u_a) -> np.ndarray:
    """Physical command ``[0 | u_s | u_r]`` scattered back to actuator order."""
    return g.partition.scatter(reconfigured_command(g, xi_f, u_a))


def corollary_variant(kind: str, model: AgentModel, *, gammas=None, outage=None, stuck=None,
                      **kwargs) -> ReconfigGains:
    """Single-fault-type designs.

    ``kind`` is ``"loe"`` (``gammas``: effectiveness per actuator, 1 for
    healthy), ``"outage"`` (``outage``: lost actuator indices) or ``"stuck"``
    (``stuck``: mapping actuator index to frozen value).
    """
    modes = list(healthy_modes(model.m))
    if kind == "loe":
        for j, gj in enumerate(gammas):
            if gj < 1.0:
                modes[j] = ActuatorMode(LOE, float(gj))
    elif kind == "outage":
        for j in outage:
            modes[j] = ActuatorMode(OUTAGE)
    elif kind == "stuck":
        for j, val in dict(stuck).items():
            modes[j] = ActuatorMode(STUCK, float(val))
    else:
        raise ValueError(f"unknown corollary kind {kind!r}")
    spec = FaultSpec(agent=0, modes=tuple(modes))
    return synthesize_reconfig(model, assemble_fault(model, spec), **kwargs)
