"""Agent and leader models, actuator fault partitions, disturbance generators.

The Sentry AUV speed-heading model is available through ``auv_preset``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.integrate import trapezoid

from .errors import AllActuatorsLost

HEALTHY, LOE, OUTAGE, STUCK = "healthy", "loe", "outage", "stuck"


def _mat(M, rows=None) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1) if rows is None or rows == M.size else M.reshape(rows, -1)
    return M


@dataclass(frozen=True)
class AgentModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    B_w: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = _mat(self.B, n)
        C = np.asarray(self.C, dtype=float).reshape(-1, n)
        Bw = _mat(self.B_w, n)
        if A.shape != (n, n) or B.shape[0] != n or Bw.shape[0] != n:
            raise ValueError("AgentModel dimensions do not conform")
        for name, M in (("A", A), ("B", B), ("C", C), ("B_w", Bw)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.B_w.shape[1]

    def is_stabilizable(self, B=None, tol: float = 1e-9) -> bool:
        """PBH test on the eigenvalues with nonnegative real part."""
        B = self.B if B is None else B
        n = self.n
        for lam in np.linalg.eigvals(self.A):
            if lam.real < 0:
                continue
            M = np.hstack([lam * np.eye(n) - self.A, B])
            s = np.linalg.svd(M, compute_uv=False)
            if s[-1] <= tol * max(1.0, s[0]):
                return False
        return True


@dataclass(frozen=True)
class LeaderSpec:
    """Leader law ``u0 = K0 x0 + F0 r(t)`` with a piecewise-constant surge reference.

    ``r(t) = [v(t), 0, ..., 0]`` where ``v`` steps to ``speeds[k]`` at ``times[k]``.
    """

    K0: np.ndarray
    F0: np.ndarray
    times: tuple = (0.0, 40.0, 80.0)
    speeds: tuple = (0.5, 1.0, 0.8)
    u0M: float | None = None

    def reference(self, t: float) -> np.ndarray:
        k = np.searchsorted(np.asarray(self.times), t, side="right") - 1
        r = np.zeros(self.F0.shape[1])
        r[0] = self.speeds[max(k, 0)] if k >= 0 else 0.0
        return r

    def control(self, x0: np.ndarray, t: float) -> np.ndarray:
        return self.K0 @ x0 + self.F0 @ self.reference(t)


def leader_input_bound(model: AgentModel, leader: LeaderSpec, horizon: float,
                       x0=None, h: float = 1e-2) -> float:
    """``sup_t ||u0(t)||_inf`` along the undisturbed leader trajectory.

    The leader is linear with a piecewise-constant reference, so the
    trajectory is propagated exactly with the matrix exponential.
    """
    n = model.n
    Acl = model.A + model.B @ leader.K0
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    Phi = sla.expm(Acl * h)
    # input-to-state map of one step under a held reference
    Gam = np.linalg.solve(Acl, (Phi - np.eye(n))) @ model.B @ leader.F0
    peak = 0.0
    steps = int(round(horizon / h))
    for k in range(steps + 1):
        t = k * h
        r = leader.reference(t)
        peak = max(peak, float(np.max(np.abs(leader.K0 @ x + leader.F0 @ r))))
        x = Phi @ x + Gam @ r
    return peak


def auv_preset(name: str = "sentry") -> tuple:
    """Linearized speed-heading model of the Sentry AUV and its leader law.

    States are surge speed (m/s), sway speed (m/s), yaw rate (rad/s) and yaw
    (rad).  Inputs are the four thruster commands.
    """
    if name != "sentry":
        raise KeyError(f"unknown plant preset {name!r}")
    A = np.array([
        [-0.0401, 0.0, 0.0, 0.0],
        [0.0, -0.709, -0.648, 0.0],
        [0.0, -1.770, 1.414, 0.0],
        [0.0, 0.0, 1.00, 0.0],
    ])
    B = 1e-3 * np.array([
        [0.44, 0.44, 0.44, 0.44],
        [0.06, -0.06, 0.06, -0.06],
        [0.49, -0.49, 0.49, -0.49],
        [0.0, 0.0, 0.0, 0.0],
    ])
    B_w = np.array([[0.023], [0.017], [0.03], [0.0]])
    C = np.array([[1.0, 0.0, 0.0, 0.0]])
    K0 = 1e4 * np.array([
        [-0.52, -3.5, -0.65, -8.0],
        [-0.22, -0.19, 0.39, 0.48],
        [-0.04, 3.48, -0.04, 6.47],
        [-0.25, 0.17, 0.45, 1.19],
    ])
    F0 = 1e3 * np.array([
        [3.02, -0.14, 0.36, 6.53],
        [-0.14, 4.02, -1.93, -2.46],
        [0.36, -1.93, -1.55, 3.61],
        [6.53, -2.46, 3.61, -9.55],
    ])
    return AgentModel(A, B, C, B_w), LeaderSpec(K0=K0, F0=F0)


# ---------------------------------------------------------------------------
# faults
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActuatorMode:
    """One actuator's condition.

    ``value`` is the effectiveness for LOE and the frozen command for a
    stuck actuator (``None`` freezes at whatever was commanded at ``t_f``).
    """

    kind: str = HEALTHY
    value: float | None = None

    def __post_init__(self):
        if self.kind not in (HEALTHY, LOE, OUTAGE, STUCK):
            raise ValueError(f"unknown actuator mode {self.kind!r}")
        if self.kind == LOE and not (self.value is not None and 0.0 < self.value < 1.0):
            raise ValueError("LOE effectiveness must lie strictly inside (0, 1)")

    @property
    def effectiveness(self) -> float:
        return {HEALTHY: 1.0, LOE: self.value, OUTAGE: 0.0, STUCK: 0.0}[self.kind]


def healthy_modes(m: int) -> tuple:
    return tuple(ActuatorMode() for _ in range(m))


@dataclass(frozen=True)
class FaultSpec:
    """Fault on one agent and the FDI report about it.

    ``modes`` is the truth seen by the plant from ``t_f`` on.  ``estimated``
    is what the FDI module reports (defaults to the truth); reconfiguration
    at ``t_r`` is designed from it.  A false alarm has healthy ``modes`` and
    faulty ``estimated``.  ``t_r = inf`` means no reconfiguration.
    """

    agent: int
    modes: tuple
    t_f: float = 0.0
    t_r: float = float("inf")
    estimated: tuple | None = None

    def __post_init__(self):
        if self.t_f < 0:
            raise ValueError("t_f must be nonnegative")
        if self.t_r < self.t_f:
            raise ValueError("t_r must not precede t_f")
        if self.estimated is not None and len(self.estimated) != len(self.modes):
            raise ValueError("estimated modes must cover every actuator")

    @property
    def reported(self) -> tuple:
        return self.modes if self.estimated is None else self.estimated

    @property
    def is_faulty(self) -> bool:
        return any(md.kind != HEALTHY for md in self.modes)


@dataclass(frozen=True)
class FaultPartition:
    """Actuators reordered as (outage | stuck | remaining).

    ``B_r`` carries the LOE scaling.  ``u_s`` may contain NaN for stuck
    actuators frozen at an unknown command.
    """

    perm: np.ndarray
    n_o: int
    n_s: int
    B_o: np.ndarray
    B_s: np.ndarray
    B_r: np.ndarray
    u_s: np.ndarray
    gamma: np.ndarray    # effectiveness of each remaining actuator

    @property
    def m(self) -> int:
        return self.perm.size

    @property
    def m_r(self) -> int:
        return self.B_r.shape[1]

    @property
    def outage_idx(self) -> np.ndarray:
        return self.perm[: self.n_o]

    @property
    def stuck_idx(self) -> np.ndarray:
        return self.perm[self.n_o: self.n_o + self.n_s]

    @property
    def remaining_idx(self) -> np.ndarray:
        return self.perm[self.n_o + self.n_s:]

    def scatter(self, u_r: np.ndarray, u_s: np.ndarray | None = None) -> np.ndarray:
        """Physical command vector ``[0 | u_s | u_r]`` in actuator order."""
        u = np.zeros(self.m)
        u[self.stuck_idx] = self.u_s if u_s is None else u_s
        u[self.remaining_idx] = u_r
        return u

    def scatter_matrix(self) -> np.ndarray:
        """``S`` with ``scatter(u_r) = S u_r + (stuck part)``."""
        S = np.zeros((self.m, self.m_r))
        S[self.remaining_idx, np.arange(self.m_r)] = 1.0
        return S


def assemble_fault(model: AgentModel, spec: FaultSpec, use_estimates: bool = False,
                   stuck_values=None) -> FaultPartition:
    """Partition the input matrix according to a fault specification.

    ``use_estimates`` selects the FDI report instead of the truth.
    ``stuck_values`` (indexed by actuator) fills stuck actuators whose
    value was left ``None``.

    Raises
    ------
    AllActuatorsLost
        If no actuator remains available.
    """
    modes = spec.reported if use_estimates else spec.modes
    if len(modes) != model.m:
        raise ValueError(f"fault spec lists {len(modes)} actuators, model has {model.m}")
    out = [j for j, md in enumerate(modes) if md.kind == OUTAGE]
    stk = [j for j, md in enumerate(modes) if md.kind == STUCK]
    rem = [j for j, md in enumerate(modes) if md.kind in (HEALTHY, LOE)]
    if not rem:
        raise AllActuatorsLost(f"agent {spec.agent} has no remaining actuator")
    gam = np.array([modes[j].effectiveness for j in rem])
    u_s = []
    for j in stk:
        v = modes[j].value
        if v is None and stuck_values is not None:
            v = stuck_values[j]
        u_s.append(np.nan if v is None else float(v))
    B = model.B
    return FaultPartition(
        perm=np.array(out + stk + rem, dtype=int), n_o=len(out), n_s=len(stk),
        B_o=B[:, out], B_s=B[:, stk], B_r=B[:, rem] * gam, u_s=np.array(u_s), gamma=gam,
    )


def effective_input(model: AgentModel, modes: Sequence[ActuatorMode], stuck_values=None) -> tuple:
    """Physical faulty input map: ``B diag(eff)`` and the constant stuck term ``B_s u_s``."""
    eff = np.array([md.effectiveness for md in modes])
    offset = np.zeros(model.n)
    for j, md in enumerate(modes):
        if md.kind == STUCK:
            v = md.value if md.value is not None else (stuck_values[j] if stuck_values is not None else np.nan)
            offset += model.B[:, j] * v
    return model.B * eff, offset


# ---------------------------------------------------------------------------
# disturbances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DisturbanceSpec:
    """Disturbance signal description.

    kind ``zero``; ``gauss_markov`` with ``mu >= 0``, white-noise intensity
    ``sigma`` and initial value ``v0`` (``mu = 0`` is a random walk);
    ``deterministic`` with ``terms`` of ``(amplitude, decay, freq, phase)``
    giving ``sum a exp(-decay t) sin(freq t + phase)``.
    """

    kind: str = "zero"
    mu: float = 0.0
    sigma: float = 0.0
    v0: float = 0.0
    seed: int = 0
    terms: tuple = ()
    dim: int = 1

    def __post_init__(self):
        if self.kind not in ("zero", "gauss_markov", "random_walk", "deterministic"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.mu < 0 or self.sigma < 0:
            raise ValueError("mu and sigma must be nonnegative")
        if self.kind == "deterministic":
            for a, lam, w, ph in self.terms:
                if lam <= 0:
                    raise ValueError("deterministic terms need a positive decay")


def sample_disturbance(spec: DisturbanceSpec, t_grid) -> np.ndarray:
    """Signal values at each grid point, shape ``(len(t_grid), dim)``."""
    t = np.asarray(t_grid, dtype=float)
    K = t.size
    if spec.kind == "zero":
        return np.zeros((K, spec.dim))
    if spec.kind == "deterministic":
        v = np.zeros(K)
        for a, lam, w, ph in spec.terms:
            v += a * np.exp(-lam * t) * np.sin(w * t + ph)
        return np.repeat(v[:, None], spec.dim, axis=1)
    h = t[1] - t[0] if K > 1 else 0.0
    if K > 2 and not np.allclose(np.diff(t), h, rtol=1e-9, atol=1e-12):
        raise ValueError("Gauss-Markov sampling needs a uniform grid")
    mu = 0.0 if spec.kind == "random_walk" else spec.mu
    rng = np.random.default_rng(spec.seed)
    phi = np.exp(-mu * h)
    var = spec.sigma**2 * ((1.0 - phi**2) / (2.0 * mu) if mu > 0 else h)
    w = rng.standard_normal((K - 1, spec.dim)) * np.sqrt(var)
    v = np.empty((K, spec.dim))
    v[0] = spec.v0
    for k in range(K - 1):
        v[k + 1] = phi * v[k] + w[k]
    return v


def signal_energy(values: np.ndarray, h: float) -> float:
    """Trapezoidal ``int ||w||^2 dt`` of sampled values."""
    e = np.sum(np.asarray(values, dtype=float).reshape(len(values), -1) ** 2, axis=1)
    return float(trapezoid(e, dx=h)) if e.size > 1 else 0.0


def disturbance_suite(scale: float = 1.0) -> list:
    """Ten fixed finite-energy signals used for empirical attenuation checks."""
    rows = [
        ((1.0, 0.2, 0.0, np.pi / 2),),
        ((1.0, 0.1, 0.5, 0.0),),
        ((1.0, 0.1, 1.0, 0.0),),
        ((1.0, 0.05, 2.0, 0.3),),
        ((1.0, 0.3, 0.1, 1.0),),
        ((0.5, 0.1, 0.3, 0.0), (0.5, 0.2, 3.0, 0.0)),
        ((1.0, 0.02, 0.05, 0.0),),
        ((1.0, 0.5, 5.0, 0.0),),
        ((0.7, 0.05, 0.2, 0.5), (0.3, 0.4, 1.5, 0.0)),
        ((1.0, 1.0, 0.0, np.pi / 2),),
    ]
    return [
        DisturbanceSpec(kind="deterministic", terms=tuple((scale * a, l, w, p) for a, l, w, p in r))
        for r in rows
    ]
