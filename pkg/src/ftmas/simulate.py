"""Fixed-step simulation of the leader, followers and auxiliary systems.

Between events the whole team is an affine system with a saturation term,

    ds/dt = M s + Nsig sat(Ksat s / phi) + c + W w_k,

where ``s`` stacks the leader state, the follower states and the auxiliary
states, and ``w_k`` is the disturbance held over step ``k``.  The right side
is evaluated exactly inside every Runge-Kutta stage, so a disturbance-free
run keeps fourth-order accuracy away from the saturation corners.

Events (leader reference steps, fault occurrence, reconfiguration) split the
horizon into segments; matrices are reassembled at each event.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy.integrate import trapezoid

from .errors import NonFiniteState, ZeroDisturbanceEnergy
from .network import Topology
from .plant import (
    AgentModel,
    DisturbanceSpec,
    FaultSpec,
    LeaderSpec,
    assemble_fault,
    effective_input,
    sample_disturbance,
)
from .synth_healthy import DEFAULT_PHI, HealthyGains
from .synth_reconfig import ReconfigGains, synthesize_reconfig, with_stuck_values

OVERFLOW_GUARD = 1e9
STATE_NAMES = ("surge", "sway", "yaw_rate", "yaw")


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _rhs(s, M, Nsig, Ksat, c, Ww, inv_phi):
    z = Ksat @ s
    for j in range(z.size):
        v = z[j] * inv_phi
        if v > 1.0:
            v = 1.0
        elif v < -1.0:
            v = -1.0
        z[j] = v
    return M @ s + Nsig @ z + c + Ww


@numba.njit(cache=True)
def _rk4_segment(s0, M, Nsig, Ksat, c, W, wseq, h, inv_phi, out, k0, k1,
                 blocks, live, guard):
    """Integrate steps ``k0..k1-1``; ``out[k+1]`` receives the state after step ``k``.

    Returns the first step index at which a live agent block exceeds
    ``guard`` (its state is then stored and integration stops), or ``k1``.
    """
    s = s0.copy()
    for k in range(k0, k1):
        Ww = W @ wseq[k]
        a = _rhs(s, M, Nsig, Ksat, c, Ww, inv_phi)
        b = _rhs(s + 0.5 * h * a, M, Nsig, Ksat, c, Ww, inv_phi)
        d = _rhs(s + 0.5 * h * b, M, Nsig, Ksat, c, Ww, inv_phi)
        e = _rhs(s + h * d, M, Nsig, Ksat, c, Ww, inv_phi)
        s = s + (h / 6.0) * (a + 2.0 * b + 2.0 * d + e)
        out[k + 1] = s
        for i in range(blocks.shape[0]):
            if live[i]:
                for j in range(blocks[i, 0], blocks[i, 1]):
                    if not (abs(s[j]) <= guard):
                        return k + 1
    return k1


# ---------------------------------------------------------------------------
# setup and events
# ---------------------------------------------------------------------------


@dataclass
class TeamSetup:
    """Everything the integrator needs.

    ``disturbances[0]`` drives the leader, ``disturbances[i + 1]`` follower
    ``i``.  ``reconfig`` may hold precomputed designs keyed by agent;
    missing ones are synthesized at the reconfiguration time from the FDI
    report.
    """

    model: AgentModel
    leader: LeaderSpec
    top: Topology
    gains: HealthyGains
    x0: np.ndarray
    x: np.ndarray
    xa: np.ndarray
    faults: Sequence[FaultSpec] = ()
    disturbances: Sequence[DisturbanceSpec] | None = None
    phi: float = DEFAULT_PHI
    reconfig: dict = field(default_factory=dict)
    pole_radius: float | None = 50.0

    @property
    def N(self) -> int:
        return self.top.n_followers


@dataclass(frozen=True)
class Event:
    t: float
    kind: str          # "leader_step", "fault", "reconfig"
    agent: int = -1


def event_timeline(setup: TeamSetup, horizon: float) -> list:
    ev = [Event(float(t), "leader_step") for t in setup.leader.times if 0 < t < horizon]
    for f in setup.faults:
        if f.t_f < horizon:
            ev.append(Event(f.t_f, "fault", f.agent))
        if f.t_r < horizon:
            ev.append(Event(f.t_r, "reconfig", f.agent))
    order = {"leader_step": 0, "fault": 1, "reconfig": 2}
    return sorted(ev, key=lambda e: (e.t, order[e.kind]))


# ---------------------------------------------------------------------------
# closed-loop assembly
# ---------------------------------------------------------------------------


@dataclass
class _AgentMode:
    kind: str = "healthy"          # healthy | faulty | reconfigured
    B_eff: np.ndarray | None = None
    offset: np.ndarray | None = None
    rg: ReconfigGains | None = None
    stuck_cmd: np.ndarray | None = None


@dataclass
class _Segment:
    k0: int
    k1: int
    M: np.ndarray
    Nsig: np.ndarray
    Ksat: np.ndarray
    c: np.ndarray
    W: np.ndarray
    ctrl_lin: np.ndarray     # (N*m, S)
    ctrl_sig: np.ndarray     # (N*m, N*m)
    ctrl_c: np.ndarray       # (N*m,)
    ua_lin: np.ndarray
    ua_sig: np.ndarray
    u0_lin: np.ndarray
    u0_c: np.ndarray


class _Layout:
    def __init__(self, n, N):
        self.n, self.N = n, N
        self.S = (2 * N + 1) * n

    def x0(self):
        return slice(0, self.n)

    def x(self, i):
        return slice(self.n * (1 + i), self.n * (2 + i))

    def xa(self, i):
        return slice(self.n * (1 + self.N + i), self.n * (2 + self.N + i))


def _assemble(setup: TeamSetup, lay: _Layout, modes: list, r: np.ndarray):
    md, g, top = setup.model, setup.gains, setup.top
    A, B, Bw, K = md.A, md.B, md.B_w, g.K
    n, m, p, N, S = md.n, md.m, md.p, setup.N, lay.S
    L22, g0 = top.L22, top.g0

    E = np.zeros((N * n, S))
    for i in range(N):
        E[i * n:(i + 1) * n, lay.x0()] = -g0[i] * np.eye(n)
        for j in range(N):
            if L22[i, j] != 0.0:
                E[i * n:(i + 1) * n, lay.xa(j)] += L22[i, j] * np.eye(n)
    IK = np.kron(np.eye(N), K)
    Ksat = IK @ E
    ua_lin = np.kron(g.coupling.C2, K) @ E
    ua_sig = np.kron(g.coupling.C0, np.eye(m))

    M = np.zeros((S, S))
    Nsig = np.zeros((S, N * m))
    c = np.zeros(S)
    W = np.zeros((S, (N + 1) * p))

    M[lay.x0(), lay.x0()] = A + B @ setup.leader.K0
    c[lay.x0()] = B @ setup.leader.F0 @ r
    W[lay.x0(), 0:p] = Bw
    u0_lin = np.zeros((m, S))
    u0_lin[:, lay.x0()] = setup.leader.K0
    u0_c = setup.leader.F0 @ r

    ctrl_lin = np.zeros((N * m, S))
    ctrl_sig = np.zeros((N * m, N * m))
    ctrl_c = np.zeros(N * m)
    for i in range(N):
        ri = slice(i * m, (i + 1) * m)
        # auxiliary copy: healthy B, no disturbance
        M[lay.xa(i), lay.xa(i)] += A
        M[lay.xa(i)] += B @ ua_lin[ri]
        Nsig[lay.xa(i)] += B @ ua_sig[ri]
        # xi_i = x_i - xa_i
        Xi = np.zeros((n, S))
        Xi[:, lay.x(i)] = np.eye(n)
        Xi[:, lay.xa(i)] = -np.eye(n)
        mode = modes[i]
        if mode.kind == "reconfigured":
            rg = mode.rg
            Sd = rg.partition.scatter_matrix()
            ctrl_lin[ri] = Sd @ (rg.K1r @ Xi + rg.K2r @ ua_lin[ri])
            ctrl_sig[ri] = Sd @ rg.K2r @ ua_sig[ri]
            ctrl_c[ri] = rg.partition.scatter(rg.u_C)
        else:
            ctrl_lin[ri] = g.K1 @ Xi + ua_lin[ri]
            ctrl_sig[ri] = ua_sig[ri]
        Beff = B if mode.B_eff is None else mode.B_eff
        M[lay.x(i), lay.x(i)] += A
        M[lay.x(i)] += Beff @ ctrl_lin[ri]
        Nsig[lay.x(i)] += Beff @ ctrl_sig[ri]
        c[lay.x(i)] += Beff @ ctrl_c[ri]
        if mode.offset is not None:
            c[lay.x(i)] += mode.offset
        W[lay.x(i), (i + 1) * p:(i + 2) * p] = Bw
    return dict(M=M, Nsig=Nsig, Ksat=Ksat, c=c, W=W, ctrl_lin=ctrl_lin, ctrl_sig=ctrl_sig,
                ctrl_c=ctrl_c, ua_lin=ua_lin, ua_sig=ua_sig, u0_lin=u0_lin, u0_c=u0_c)


def _controls(seg: _Segment, states: np.ndarray, inv_phi: float) -> tuple:
    sig = np.clip(states @ seg.Ksat.T * inv_phi, -1.0, 1.0)
    u = states @ seg.ctrl_lin.T + sig @ seg.ctrl_sig.T + seg.ctrl_c
    ua = states @ seg.ua_lin.T + sig @ seg.ua_sig.T
    u0 = states @ seg.u0_lin.T + seg.u0_c
    return u, ua, u0


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


@dataclass
class SimTrace:
    t: np.ndarray
    x0: np.ndarray      # (T, n)
    x: np.ndarray       # (T, N, n)
    xa: np.ndarray      # (T, N, n)
    u: np.ndarray       # (T, N, m) physical commands
    ua: np.ndarray      # (T, N, m)
    u0: np.ndarray      # (T, m)
    w: np.ndarray       # (T, N+1, p)
    top: Topology
    C: np.ndarray
    h: float
    faults: tuple = ()
    diverged: dict = field(default_factory=dict)      # agent -> time
    reconfig: dict = field(default_factory=dict)      # agent -> ReconfigGains
    stuck_values: dict = field(default_factory=dict)  # agent -> actuator commands at t_f

    @property
    def N(self) -> int:
        return self.x.shape[1]

    @property
    def xi(self) -> np.ndarray:
        return self.x - self.xa

    @property
    def e(self) -> np.ndarray:
        """Consensus errors ``sum_j g_ij (x_i - x_j) + g_i0 (x_i - x0)``."""
        return np.einsum("ij,tjk->tik", self.top.L22, self.x) - self.top.g0[None, :, None] * self.x0[:, None, :]

    @property
    def ea(self) -> np.ndarray:
        return np.einsum("ij,tjk->tik", self.top.L22, self.xa) - self.top.g0[None, :, None] * self.x0[:, None, :]

    @property
    def z(self) -> np.ndarray:
        """Output deviations ``C xi`` per agent, shape ``(T, N, q)``."""
        return np.einsum("qn,tin->tiq", self.C, self.xi)

    def columns(self) -> list:
        N, n, m = self.N, self.x.shape[2], self.u.shape[2]
        names = STATE_NAMES if n == len(STATE_NAMES) else tuple(f"s{k}" for k in range(n))
        cols = ["t"] + [f"leader_{s}" for s in names]
        for i in range(N):
            cols += [f"agent{i}_{s}" for s in names]
            cols += [f"agent{i}_aux_{s}" for s in names]
            cols += [f"agent{i}_u{k}" for k in range(m)]
            cols += [f"agent{i}_e_{s}" for s in names]
            cols += [f"agent{i}_ea_{s}" for s in names]
            cols += [f"agent{i}_z{k}" for k in range(self.C.shape[0])]
        return cols

    def rows(self, stride: int = 1) -> np.ndarray:
        idx = np.arange(0, self.t.size, stride)
        e, ea, z = self.e[idx], self.ea[idx], self.z[idx]
        parts = [self.t[idx, None], self.x0[idx]]
        for i in range(self.N):
            parts += [self.x[idx, i], self.xa[idx, i], self.u[idx, i], e[:, i], ea[:, i], z[:, i]]
        return np.hstack(parts)

    def to_csv(self, path_or_buf=None, stride: int = 1) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns())
        for row in self.rows(stride):
            wr.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path_or_buf is not None:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# integrate
# ---------------------------------------------------------------------------


def _grid_index(t: float, h: float) -> int:
    k = int(round(t / h))
    if abs(k * h - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"event time {t} is not a multiple of the step {h}")
    return k


def integrate(setup: TeamSetup, h: float = 1e-3, horizon: float = 120.0,
              overflow_guard: float = OVERFLOW_GUARD) -> SimTrace:
    """Simulate the team with classical RK4 at fixed step ``h``.

    A follower whose state exceeds ``overflow_guard`` is flagged diverged
    and frozen; the rest of the team keeps running (physical states are
    not exchanged, so a frozen agent does not affect the others).

    Raises
    ------
    NonFiniteState
        If a state becomes NaN or infinite in an agent that is not flagged
        diverged.
    """
    if h <= 0 or horizon <= 0:
        raise ValueError("h and horizon must be positive")
    md, N = setup.model, setup.N
    n, m, p = md.n, md.m, md.p
    lay = _Layout(n, N)
    steps = int(round(horizon / h))
    t = np.arange(steps + 1) * h

    dist = setup.disturbances or [DisturbanceSpec(dim=p)] * (N + 1)
    if len(dist) != N + 1:
        raise ValueError("need one disturbance spec for the leader and one per follower")
    wseq = np.hstack([sample_disturbance(d, t)[:, :p] if d.dim >= p
                      else np.repeat(sample_disturbance(d, t), p, axis=1) for d in dist])

    out = np.empty((steps + 1, lay.S))
    s = np.zeros(lay.S)
    s[lay.x0()] = setup.x0
    for i in range(N):
        s[lay.x(i)] = setup.x[i]
        s[lay.xa(i)] = setup.xa[i]
    out[0] = s

    modes = [_AgentMode() for _ in range(N)]
    faults = {f.agent: f for f in setup.faults}
    blocks = np.array([[lay.x(i).start, lay.x(i).stop] for i in range(N)], dtype=np.int64)
    live = np.ones(N, dtype=np.bool_)
    diverged, reconfig, stuck_values = {}, dict(setup.reconfig), {}
    inv_phi = 1.0 / setup.phi

    events = event_timeline(setup, horizon)
    cuts = sorted({0, steps} | {_grid_index(e.t, h) for e in events})
    segments = []
    ev_ptr = 0
    mats = None
    for a, b in zip(cuts[:-1], cuts[1:]):
        tk = a * h
        # apply events at this instant
        while ev_ptr < len(events) and _grid_index(events[ev_ptr].t, h) == a:
            e = events[ev_ptr]
            ev_ptr += 1
            if e.kind == "fault":
                f = faults[e.agent]
                if mats is not None:
                    sig = np.clip(mats["Ksat"] @ out[a] * inv_phi, -1, 1)
                    cmd = (mats["ctrl_lin"] @ out[a] + mats["ctrl_sig"] @ sig + mats["ctrl_c"])[e.agent * m:(e.agent + 1) * m]
                else:
                    cmd = np.zeros(m)
                stuck_values[e.agent] = cmd
                Beff, off = effective_input(md, f.modes, stuck_values=cmd)
                modes[e.agent].B_eff, modes[e.agent].offset = Beff, off
                if modes[e.agent].kind == "healthy":
                    modes[e.agent].kind = "faulty"
            elif e.kind == "reconfig":
                f = faults[e.agent]
                rg = reconfig.get(e.agent)
                cmd = stuck_values.get(e.agent)
                if rg is None:
                    part = assemble_fault(md, f, use_estimates=True, stuck_values=cmd)
                    rg = synthesize_reconfig(md, part, pole_radius=setup.pole_radius)
                if rg.partition.n_s and np.any(np.isnan(rg.partition.u_s)):
                    part = assemble_fault(md, f, use_estimates=True, stuck_values=cmd)
                    rg = with_stuck_values(rg, part.u_s)
                    rg.partition = part
                reconfig[e.agent] = rg
                modes[e.agent].kind = "reconfigured"
                modes[e.agent].rg = rg
        mats = _assemble(setup, lay, modes, setup.leader.reference(tk))
        for i in np.flatnonzero(~live):
            sl = lay.x(i)
            mats["M"][sl] = 0.0
            mats["Nsig"][sl] = 0.0
            mats["c"][sl] = 0.0
            mats["W"][sl] = 0.0
        k = a
        while k < b:
            stop = _rk4_segment(out[k], mats["M"], mats["Nsig"], mats["Ksat"], mats["c"],
                                mats["W"], wseq, h, inv_phi, out, k, b, blocks, live,
                                overflow_guard)
            if stop < b or (stop == b and _exceeds(out[b], blocks, live, overflow_guard)):
                for i in range(N):
                    if live[i] and not np.all(np.abs(out[stop, lay.x(i)]) <= overflow_guard):
                        live[i] = False
                        diverged[i] = float(stop * h)
                        sl = lay.x(i)
                        mats["M"][sl] = 0.0
                        mats["Nsig"][sl] = 0.0
                        mats["c"][sl] = 0.0
                        mats["W"][sl] = 0.0
            k = stop
        segments.append(_Segment(a, b, **mats))

    for i in range(N):
        if i not in diverged and not np.all(np.isfinite(out[:, lay.x(i)])):
            raise NonFiniteState(f"agent {i} state became non-finite")

    u = np.empty((steps + 1, N * m))
    ua = np.empty((steps + 1, N * m))
    u0 = np.empty((steps + 1, m))
    for seg in segments:
        # the state at a cut belongs to the segment that starts there
        lo = seg.k0
        hi = seg.k1 + 1 if seg.k1 == steps else seg.k1
        u[lo:hi], ua[lo:hi], u0[lo:hi] = _controls(seg, out[lo:hi], inv_phi)

    x = np.stack([out[:, lay.x(i)] for i in range(N)], axis=1)
    xa = np.stack([out[:, lay.xa(i)] for i in range(N)], axis=1)
    return SimTrace(
        t=t, x0=out[:, lay.x0()].copy(), x=x, xa=xa,
        u=u.reshape(-1, N, m), ua=ua.reshape(-1, N, m), u0=u0,
        w=wseq.reshape(-1, N + 1, p), top=setup.top, C=md.C, h=h,
        faults=tuple(setup.faults), diverged=diverged, reconfig=reconfig,
        stuck_values=stuck_values,
    )


def _exceeds(s, blocks, live, guard) -> bool:
    for i, (lo, hi) in enumerate(blocks):
        if live[i] and not np.all(np.abs(s[lo:hi]) <= guard):
            return True
    return False


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _energy(v: np.ndarray, h: float) -> float:
    e = np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1)
    return float(trapezoid(e, dx=h)) if e.size > 1 else 0.0


def team_ratio(trace: SimTrace) -> float:
    """``int sum ||x_i - x0||^2 / int sum (||w_i||^2 + ||w_0||^2)``."""
    num = _energy(trace.x - trace.x0[:, None, :], trace.h)
    den = _energy(trace.w[:, 1:], trace.h) + trace.N * _energy(trace.w[:, 0], trace.h)
    if den <= 0.0:
        raise ZeroDisturbanceEnergy("no disturbance energy")
    return num / den


def faulty_ratio(trace: SimTrace, agent: int, t_from: float) -> float:
    """``int ||xi_f||^2 / int ||w_i||^2`` from ``t_from`` on."""
    k = int(round(t_from / trace.h))
    num = _energy(trace.xi[k:, agent], trace.h)
    den = _energy(trace.w[k:, agent + 1], trace.h)
    if den <= 0.0:
        raise ZeroDisturbanceEnergy("no disturbance energy on the faulty agent")
    return num / den


def metrics(trace: SimTrace, gamma: float | None = None, gamma_f: dict | None = None,
            settle: float = 10.0, window: float = 0.1) -> dict:
    """Summary report of a run.

    Steady-state quantities are means over the last ``window`` fraction of
    the horizon.  Ratios are ``None`` when the disturbance energy is zero.
    """
    T = trace.t.size
    k_ss = int(T * (1.0 - window))
    surge_err = np.abs(trace.x[k_ss:, :, 0] - trace.x0[k_ss:, None, 0]).mean(axis=0)
    ref = np.abs(trace.x0[k_ss:, 0]).mean()
    ea_norm = np.linalg.norm(trace.ea[k_ss:], axis=2).mean(axis=0)
    rep = {
        "horizon": float(trace.t[-1]),
        "h": trace.h,
        "diverged": {str(i): trace.diverged.get(i) for i in range(trace.N)},
        "surge_error_ss": surge_err.tolist(),
        "surge_error_rel_ss": (surge_err / max(ref, 1e-12)).tolist(),
        "ea_norm_ss": ea_norm.tolist(),
        "leader_u0_max": float(np.max(np.abs(trace.u0))),
    }
    try:
        rep["team_ratio"] = team_ratio(trace)
    except ZeroDisturbanceEnergy:
        rep["team_ratio"] = None
    if gamma is not None:
        rep["gamma"] = gamma
        rep["team_ratio_ok"] = None if rep["team_ratio"] is None else rep["team_ratio"] <= gamma**2
    faulty = {}
    for f in trace.faults:
        if f.agent in trace.reconfig and f.t_r <= trace.t[-1]:
            k = int(round((f.t_r + settle) / trace.h))
            entry = {
                "t_r": f.t_r,
                "max_abs_z_after_settle": float(np.max(np.abs(trace.z[k:, f.agent]))) if k < T else None,
                "gamma_f": trace.reconfig[f.agent].gamma_f,
            }
            try:
                entry["ratio"] = faulty_ratio(trace, f.agent, f.t_r)
            except ZeroDisturbanceEnergy:
                entry["ratio"] = None
            if entry["ratio"] is not None:
                entry["ratio_ok"] = entry["ratio"] <= entry["gamma_f"] ** 2
            faulty[str(f.agent)] = entry
    rep["faulty"] = faulty
    return rep


def summary_json(trace: SimTrace, report: dict, extra: dict | None = None) -> str:
    doc = {"metrics": report}
    doc["reconfig"] = {
        str(a): {
            "method": g.method, "alpha": g.alpha, "gamma_f": g.gamma_f,
            "exact": g.exact, "matching_residual": g.matching_residual,
            "stuck_residual": g.stuck_residual, "K1r": g.K1r.tolist(), "K2r": g.K2r.tolist(),
            "u_C": g.u_C.tolist(),
            "closed_loop_poles": sorted(np.linalg.eigvals(g.closed_loop).real.tolist()),
        }
        for a, g in trace.reconfig.items()
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
