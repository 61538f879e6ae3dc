"""Robustness analyses of a reconfigured agent.

* Severity uncertainty: how far the true effectiveness of each remaining
  actuator may differ from the FDI estimate before ``A + B_r K1r`` can lose
  stability (a Lyapunov small-gain budget).
* Recovery delay: how long the un-reconfigured faulty loop may run before
  the agent's state leaves a ball of radius ``x_M``.
* The generic test ``||f(x, t)|| / ||x|| < 1 / sigma_max(P)`` for a Hurwitz
  matrix perturbed by a bounded nonlinearity.
* Stuck-value estimation error: the constant forcing it leaves behind and
  the resulting steady output offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import NeverExceeds, NotHurwitz
from .matops import solve_lyapunov, spectral_report
from .plant import AgentModel, FaultSpec, effective_input
from .synth_healthy import HealthyGains
from .synth_reconfig import ReconfigGains


@dataclass
class RobustnessReport:
    eps_max: np.ndarray
    P_lyap: np.ndarray
    delta_max: float = float("nan")
    x_M: float = float("nan")
    eta: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _lyapunov_2I(Ac: np.ndarray) -> np.ndarray:
    rep = spectral_report(Ac)
    if not rep.is_hurwitz:
        raise NotHurwitz(f"closed loop is not Hurwitz (max real part {rep.max_real_part:.3e})")
    return solve_lyapunov(Ac, 2.0 * np.eye(Ac.shape[0]))


def channel_sensitivities(g: ReconfigGains) -> np.ndarray:
    """``||b^l k^l||_2`` for every remaining actuator ``l``."""
    B_r, K = g.partition.B_r, g.K1r
    return np.array([np.linalg.norm(np.outer(B_r[:, l], K[l]), 2) for l in range(B_r.shape[1])])


def severity_uncertainty_bound(g: ReconfigGains, weights=None, norm: str = "sigma_max") -> tuple:
    """Per-channel bound on the relative effectiveness error.

    With ``P`` solving ``P Ac + Ac^T P = -2I``, any perturbation
    ``Ac + sum_l eps_l b^l k^l`` with ``sum_l |eps_l| ||b^l k^l|| < 1 / sigma(P)``
    stays Hurwitz when ``sigma`` is the largest singular value.  The budget
    is split across channels by ``weights`` (equal by default); channels
    whose gain row is zero get ``+inf``.

    ``norm="sigma_min"`` uses the smallest singular value instead, giving a
    larger budget that is not guaranteed by the Lyapunov argument.

    Returns
    -------
    eps_max : ndarray
    P : ndarray
        The Lyapunov solution.

    Raises
    ------
    NotHurwitz
        If the reconfigured closed loop is not Hurwitz.
    """
    if norm not in ("sigma_max", "sigma_min"):
        raise ValueError("norm must be 'sigma_max' or 'sigma_min'")
    P = _lyapunov_2I(g.closed_loop)
    sv = np.linalg.svd(P, compute_uv=False)
    budget = 1.0 / (sv[0] if norm == "sigma_max" else sv[-1])
    sens = channel_sensitivities(g)
    active = sens > 0.0
    w = np.ones(sens.size) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != sens.shape or np.any(w < 0):
        raise ValueError("weights must be nonnegative, one per remaining actuator")
    eps = np.full(sens.size, np.inf)
    wa = w[active]
    if wa.sum() > 0:
        eps[active] = budget * (wa / wa.sum()) / sens[active]
    return eps, P


def perturbed_closed_loop(g: ReconfigGains, eps) -> np.ndarray:
    """``A + B_r K1r + sum_l eps_l b^l k^l``."""
    eps = np.asarray(eps, dtype=float)
    return g.closed_loop + (g.partition.B_r * eps) @ g.K1r


def sample_severity_perturbations(g: ReconfigGains, eps_max, n: int = 20, seed: int = 0) -> list:
    """Random ``eps`` with ``|eps_l| <= eps_max_l`` and the largest real part of each perturbed loop.

    Infinite bounds are sampled on ``[-1, 1]``.
    """
    rng = np.random.default_rng(seed)
    lim = np.where(np.isfinite(eps_max), eps_max, 1.0)
    out = []
    for _ in range(n):
        eps = rng.uniform(-1.0, 1.0, lim.size) * lim
        out.append((eps, float(np.max(np.linalg.eigvals(perturbed_closed_loop(g, eps)).real))))
    return out


def destabilizing_scale(g: ReconfigGains, direction, t_max: float = 1e3, rtol: float = 1e-6) -> float:
    """Smallest ``t > 0`` with ``Ac + t sum_l d_l b^l k^l`` not Hurwitz, or ``inf`` below ``t_max``."""
    d = np.asarray(direction, dtype=float)

    def stable(t):
        return np.max(np.linalg.eigvals(perturbed_closed_loop(g, t * d)).real) < 0.0

    if stable(t_max):
        return np.inf
    lo, hi = 0.0, t_max
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if stable(mid) else (lo, mid)
    return hi


def perturbation_stability_check(Ac, f_bound: float) -> bool:
    """``f_bound < 1 / sigma_max(P)`` with ``P Ac + Ac^T P = -2I``.

    Raises
    ------
    NotHurwitz
    """
    if f_bound < 0:
        raise ValueError("f_bound must be nonnegative")
    P = _lyapunov_2I(np.atleast_2d(np.asarray(Ac, dtype=float)))
    return bool(f_bound < 1.0 / np.linalg.norm(P, 2))


# ---------------------------------------------------------------------------
# stuck-value error
# ---------------------------------------------------------------------------


def stuck_residual_forcing(model: AgentModel, spec: FaultSpec, g: ReconfigGains,
                           stuck_values=None) -> np.ndarray:
    """Constant term left in the reconfigured error dynamics, ``eta``.

    ``eta = B_true u_cmd_const + B_s u_s_true`` where ``u_cmd_const`` is
    the stuck compensation ``u_C`` scattered to the remaining actuators.
    It vanishes when the stuck estimate is exact.
    """
    Beff, off = effective_input(model, spec.modes, stuck_values)
    return Beff @ g.partition.scatter(g.u_C, np.zeros(g.partition.n_s)) + off


def steady_output_offset(model: AgentModel, g: ReconfigGains, eta) -> np.ndarray:
    """``-C (A + B_r K1r)^{-1} eta``: the steady value of ``z`` driven by ``eta``."""
    return -model.C @ np.linalg.solve(g.closed_loop, np.asarray(eta, dtype=float))


# ---------------------------------------------------------------------------
# recovery delay
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _first_exit(Mcl, D, xi0, xa, ua, off, h, x_M, k0):
    """RK4 on ``xi' = Mcl xi + D ua(t) + off`` with ``ua`` linear between samples.

    Returns the first index ``k > k0`` with ``||xi_k + xa_k|| > x_M``, or -1.
    """
    xi = xi0.copy()
    T = xa.shape[0]
    for k in range(k0, T - 1):
        f0 = D @ ua[k] + off
        f1 = D @ ua[k + 1] + off
        fm = 0.5 * (f0 + f1)
        a = Mcl @ xi + f0
        b = Mcl @ (xi + 0.5 * h * a) + fm
        c = Mcl @ (xi + 0.5 * h * b) + fm
        d = Mcl @ (xi + h * c) + f1
        xi = xi + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        x = xi + xa[k + 1]
        if not (np.sqrt(np.sum(x * x)) <= x_M):
            return k + 1
    return -1


def max_recovery_delay(model: AgentModel, spec: FaultSpec, gains: HealthyGains, t, xa, ua,
                       x_tf, x_M: float, stuck_values=None) -> float:
    """Largest delay ``Delta`` before reconfiguration that keeps ``||x|| <= x_M``.

    The faulty agent keeps its healthy law from ``spec.t_f`` on; its
    auxiliary copy (fault-free) follows the given trajectory ``xa``, ``ua``
    sampled on the uniform grid ``t``.  The first grid point where the
    state norm exceeds ``x_M`` is located and the delay returned is the
    last grid time before it, measured from ``t_f`` (accurate to one step).

    Raises
    ------
    NeverExceeds
        If the state stays inside the ball over the whole trajectory.
    """
    t = np.asarray(t, dtype=float)
    xa = np.ascontiguousarray(xa, dtype=float)
    ua = np.ascontiguousarray(ua, dtype=float)
    h = float(t[1] - t[0])
    k0 = int(round((spec.t_f - t[0]) / h))
    if not 0 <= k0 < t.size - 1:
        raise ValueError("t_f outside the trajectory")
    x_tf = np.asarray(x_tf, dtype=float)
    if not np.linalg.norm(x_tf) < x_M:
        raise ValueError("x_M must exceed the state norm at t_f")
    xi0 = x_tf - xa[k0]
    if stuck_values is None:
        stuck_values = gains.K1 @ xi0 + ua[k0]
    Beff, off = effective_input(model, spec.modes, stuck_values)
    Mcl = model.A + Beff @ gains.K1
    D = Beff - model.B
    k = _first_exit(Mcl, D, xi0, xa, ua, off, h, float(x_M), k0)
    if k < 0:
        raise NeverExceeds(f"state stays within {x_M:g} until t = {t[-1]:g}")
    return float((k - 1 - k0) * h)


def perturbed_tracking_run(model: AgentModel, g: ReconfigGains, eps, t, ua, xi0, t_start: float,
                           guard: float = 1e9) -> float | None:
    """Run the reconfigured tracking error with mis-estimated effectiveness.

    Remaining actuator ``l`` delivers ``(1 + eps_l)`` times what the design
    assumed, so from ``t_start`` on

    ``xi' = (A + B_r E K1r) xi + (B_r E K2r - B) u_a + B_r E u_C + B_s u_s``

    with ``E = I + diag(eps)`` and ``u_a`` sampled on the uniform grid
    ``t``.  Returns the first time ``||xi||`` exceeds ``guard``, or ``None``
    if it never does.
    """
    part = g.partition
    E = 1.0 + np.asarray(eps, dtype=float)
    BrE = part.B_r * E
    Mcl = model.A + BrE @ g.K1r
    D = BrE @ g.K2r - model.B
    u_s = np.nan_to_num(part.u_s) if part.n_s else np.zeros(0)
    off = BrE @ g.u_C + (part.B_s @ u_s if part.n_s else 0.0)
    t = np.asarray(t, dtype=float)
    h = float(t[1] - t[0])
    k0 = int(round((t_start - t[0]) / h))
    ua = np.ascontiguousarray(ua, dtype=float)
    zero = np.zeros((t.size, model.n))
    k = _first_exit(np.ascontiguousarray(Mcl), np.ascontiguousarray(D), np.asarray(xi0, dtype=float),
                    zero, ua, np.asarray(off, dtype=float) + np.zeros(model.n), h, float(guard), k0)
    return None if k < 0 else float(t[k])
