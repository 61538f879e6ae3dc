"""Dense matrix kernels: Lyapunov and Riccati solvers, H-infinity norm, LMI engine.

Everything here is a pure function of its inputs.  Tolerances default to the
module constants below and can be overridden per call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .errors import (
    HamiltonianImaginaryAxis,
    IllConditioned,
    Infeasible,
    MaxIterExceeded,
    NotHurwitz,
)

FEAS_TOL = 1e-7
RTOL = 1e-9
ITOL = 1e-8
PD_FLOOR = 1e-9
ALPHA_BRACKET = (1e-9, 1e9)
ALPHA_REL_WIDTH = 1e-6


def _as2d(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray
    max_real_part: float
    is_hurwitz: bool


def spectral_report(A) -> SpectralReport:
    ev = np.linalg.eigvals(_as2d(A))
    mr = float(np.max(ev.real))
    return SpectralReport(eigenvalues=ev, max_real_part=mr, is_hurwitz=mr < 0.0)


def _require_hurwitz(A: np.ndarray, what: str = "matrix") -> None:
    rep = spectral_report(A)
    if not rep.is_hurwitz:
        raise NotHurwitz(f"{what} is not Hurwitz (max real part {rep.max_real_part:.3e})")


# ---------------------------------------------------------------------------
# Lyapunov
# ---------------------------------------------------------------------------


def solve_lyapunov(Ac, Q, rtol: float = RTOL) -> np.ndarray:
    """Solve ``P Ac + Ac^T P = -Q`` for symmetric ``P``.

    One step of iterative refinement is applied to the Bartels-Stewart
    solution, which is usually enough to bring the residual down to a few
    ulps of ``||Q||``.

    Raises
    ------
    NotHurwitz
        If ``Ac`` has an eigenvalue with nonnegative real part.
    IllConditioned
        If the residual stays above ``rtol * ||Q||_F``.
    """
    Ac = _as2d(Ac)
    Q = sym(_as2d(Q))
    _require_hurwitz(Ac, "Ac")

    def resid(P):
        return P @ Ac + Ac.T @ P + Q

    P = sym(sla.solve_continuous_lyapunov(Ac.T, -Q))
    R = resid(P)
    if np.linalg.norm(R) > 0.0:
        P = sym(P + sla.solve_continuous_lyapunov(Ac.T, -sym(R)))
        R = resid(P)
    qn = np.linalg.norm(Q)
    if np.linalg.norm(R) > rtol * max(qn, np.finfo(float).tiny):
        if qn == 0.0 and np.linalg.norm(R) == 0.0:
            return P
        raise IllConditioned(
            f"Lyapunov residual {np.linalg.norm(R):.3e} exceeds {rtol:.1e}*||Q||"
        )
    return P


# ---------------------------------------------------------------------------
# H-infinity Riccati
# ---------------------------------------------------------------------------


def riccati_lhs(A, B, B_w, P, c3, c4inv, gamma, d0) -> np.ndarray:
    """Left side ``A^T P + P A - c3 P B B^T P + 2 c4inv/gamma^2 P Bw Bw^T P + d0 I``."""
    A, B, B_w, P = map(_as2d, (A, B, B_w, P))
    PB = P @ B
    PW = P @ B_w
    n = A.shape[0]
    return sym(
        A.T @ P + P @ A - c3 * PB @ PB.T
        + (2.0 * c4inv / gamma**2) * PW @ PW.T + d0 * np.eye(n)
    )


def stable_hamiltonian_solution(A, R, Qc, itol: float = ITOL) -> np.ndarray:
    """Stabilizing solution of ``A^T P + P A - P R P + Qc = 0``.

    Uses the ordered real Schur form of the Hamiltonian
    ``[[A, -R], [-Qc, -A^T]]``.
    """
    A, R, Qc = _as2d(A), sym(_as2d(R)), sym(_as2d(Qc))
    n = A.shape[0]
    H = np.block([[A, -R], [-Qc, -A.T]])
    scale = max(1.0, np.linalg.norm(H, 1))
    ev = np.linalg.eigvals(H)
    if np.min(np.abs(ev.real)) <= itol * scale:
        raise HamiltonianImaginaryAxis(
            f"Hamiltonian eigenvalue within {itol:.0e} of the imaginary axis"
        )
    try:
        T, U, sdim = sla.schur(H, output="real", sort="lhp")
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise IllConditioned(f"ordered Schur form failed: {exc}") from exc
    if sdim != n:
        raise Infeasible(f"stable subspace has dimension {sdim}, expected {n}")
    U11, U21 = U[:n, :n], U[n:, :n]
    if np.linalg.cond(U11) > 1.0 / (np.finfo(float).eps * 1e2):
        raise Infeasible("stable subspace is not a graph; no stabilizing solution")
    return sym(np.linalg.solve(U11.T, U21.T).T)


def solve_h_inf_riccati(
    A, B, B_w, c3: float, c4inv: float, gamma: float, d0: float,
    margin_eps: float = 1e-6, itol: float = ITOL,
) -> np.ndarray:
    """Positive definite ``P`` certifying the strict H-infinity Riccati inequality.

    Solves ``A^T P + P A - P R P + (d0 + margin_eps) I = 0`` with
    ``R = c3 B B^T - 2 c4inv / gamma^2 Bw Bw^T`` and then checks the
    inequality by substitution.

    Raises
    ------
    Infeasible
        No stabilizing positive definite solution at this ``gamma``.
    HamiltonianImaginaryAxis
        Hamiltonian spectrum touches the imaginary axis (subclass of
        ``Infeasible``).
    """
    if c3 <= 0 or c4inv <= 0 or gamma <= 0 or margin_eps < 0:
        raise ValueError("c3, c4inv, gamma must be positive and margin_eps >= 0")
    A, B, B_w = _as2d(A), _as2d(B), _as2d(B_w)
    n = A.shape[0]
    R = c3 * B @ B.T - (2.0 * c4inv / gamma**2) * B_w @ B_w.T
    P = stable_hamiltonian_solution(A, R, (d0 + margin_eps) * np.eye(n), itol)
    lmin = np.linalg.eigvalsh(P)[0]
    if lmin <= 0.0:
        raise Infeasible(f"Riccati solution not positive definite (lambda_min={lmin:.3e})")
    lhs = riccati_lhs(A, B, B_w, P, c3, c4inv, gamma, d0)
    lmax = np.linalg.eigvalsh(lhs)[-1]
    slack = RTOL * max(1.0, np.linalg.norm(P) * np.linalg.norm(A), d0)
    if lmax > -margin_eps / 2.0 + slack:
        raise Infeasible(f"Riccati inequality margin {lmax:.3e} not below {-margin_eps/2:.3e}")
    return P


# ---------------------------------------------------------------------------
# H-infinity norm
# ---------------------------------------------------------------------------


def sigma_max_at(A, B, C, w: float) -> float:
    n = A.shape[0]
    G = C @ np.linalg.solve(1j * w * np.eye(n) - A, B)
    return float(np.linalg.svd(G, compute_uv=False)[0])


def _imag_axis_freqs(A, B, C, g: float, tol: float) -> np.ndarray:
    H = np.block([[A, (B @ B.T) / g**2], [-C.T @ C, -A.T]])
    ev = np.linalg.eigvals(H)
    scale = max(1.0, np.linalg.norm(H, 1))
    on_axis = ev[np.abs(ev.real) <= tol * scale]
    return np.sort(np.unique(np.round(np.abs(on_axis.imag), 12)))


def h_inf_norm(A, B, C, tol: float = 1e-6) -> float:
    """``||C (sI - A)^{-1} B||_inf`` by the two-step Hamiltonian iteration.

    Level-set iteration in the style of Boyd-Balakrishnan: at a lower bound
    ``g`` the imaginary-axis eigenvalues of the Hamiltonian locate the
    frequency intervals where ``sigma_max > g``; the midpoints give a better
    lower bound.  Stops when ``g (1 + 2 tol)`` has no crossing.
    """
    A, B, C = _as2d(A), _as2d(B), _as2d(C)
    _require_hurwitz(A, "A")
    if not np.any(B) or not np.any(C):
        return 0.0
    ev = np.linalg.eigvals(A)
    cands = [0.0] + list(np.abs(ev.imag)) + [float(np.max(np.abs(ev)))]
    g = max(sigma_max_at(A, B, C, w) for w in cands)
    for _ in range(200):
        ws = _imag_axis_freqs(A, B, C, g * (1.0 + 2.0 * tol), 1e-7)
        if ws.size == 0:
            return g * (1.0 + tol)
        if ws.size == 1:
            mids = ws
        else:
            mids = np.sqrt(ws[:-1] * ws[1:])
            mids = np.where(ws[:-1] == 0.0, 0.5 * ws[1:], mids)
        g_new = max(sigma_max_at(A, B, C, w) for w in mids)
        if g_new <= g * (1.0 + 2.0 * tol):
            # crossing detected but no improvement: numerically converged
            return g * (1.0 + tol)
        g = g_new
    raise IllConditioned("H-infinity norm iteration did not converge")


# ---------------------------------------------------------------------------
# LMI engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LmiVariable:
    """Matrix decision variable.

    ``positive`` adds the constraint ``X >= pd_floor I`` (symmetric only).
    """

    name: str
    shape: tuple
    symmetric: bool = False
    positive: bool = False

    def __post_init__(self):
        r, c = self.shape
        if (self.symmetric or self.positive) and r != c:
            raise ValueError(f"symmetric variable {self.name} must be square")
        if self.positive and not self.symmetric:
            object.__setattr__(self, "symmetric", True)

    @property
    def size(self) -> int:
        r, c = self.shape
        return r * (r + 1) // 2 if self.symmetric else r * c

    def unpack(self, x: np.ndarray) -> np.ndarray:
        r, c = self.shape
        if not self.symmetric:
            return x.reshape(r, c)
        M = np.zeros((r, r))
        M[np.triu_indices(r)] = x
        return M + np.triu(M, 1).T

    def pack(self, M: np.ndarray) -> np.ndarray:
        M = np.asarray(M, dtype=float).reshape(self.shape)
        if not self.symmetric:
            return M.ravel().copy()
        return sym(M)[np.triu_indices(self.shape[0])]


@dataclass
class LmiSolution:
    variables: dict
    margin: float
    objective: float = 0.0
    feasible: bool = False
    iterations: int = 0
    min_pd_eig: float = np.inf


BlockFn = Callable[[Mapping[str, np.ndarray]], np.ndarray]


def _assemble(blocks, values) -> np.ndarray:
    if callable(blocks):
        return sym(np.asarray(blocks(values), dtype=float))
    return sla.block_diag(*[sym(np.asarray(b(values), dtype=float)) for b in blocks])


def lmi_margin(blocks, values: Mapping[str, np.ndarray]) -> float:
    """``lambda_max`` of the assembled block matrix at the given variables."""
    return float(np.linalg.eigvalsh(_assemble(blocks, values))[-1])


class _AffineLmi:
    """Affine map x -> F0 + sum_k x_k F_k extracted by unit evaluation."""

    def __init__(self, blocks, variables: Sequence[LmiVariable], pd_floor: float):
        self.blocks = blocks
        self.vars = list(variables)
        self.pd_floor = pd_floor
        self.offsets = np.cumsum([0] + [v.size for v in self.vars])
        self.nx = int(self.offsets[-1])
        x0 = np.zeros(self.nx)
        F0 = _assemble(blocks, self.values(x0))
        self.d_user = F0.shape[0]
        basis = []
        for k in range(self.nx):
            e = np.zeros(self.nx)
            e[k] = 1.0
            basis.append(_assemble(blocks, self.values(e)) - F0)
        self.F0 = F0
        self.Fk = np.array(basis).reshape(self.nx, -1)
        self._check_affine()
        # positivity blocks pd_floor I - X, appended block diagonally
        self.pd_vars = [i for i, v in enumerate(self.vars) if v.positive]

    def values(self, x) -> dict:
        return {
            v.name: v.unpack(x[self.offsets[i]:self.offsets[i + 1]])
            for i, v in enumerate(self.vars)
        }

    def _check_affine(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(self.nx)
        direct = _assemble(self.blocks, self.values(x))
        d = self.d_user
        lin = self.F0 + (x @ self.Fk).reshape(d, d)
        if np.linalg.norm(direct - lin) > 1e-8 * max(1.0, np.linalg.norm(direct)):
            raise ValueError("LMI expression is not affine in its variables")

    def user_matrix(self, x) -> np.ndarray:
        d = self.d_user
        return sym(self.F0 + (x @ self.Fk).reshape(d, d))

    def pd_eigs(self, x) -> np.ndarray:
        out = []
        for i in self.pd_vars:
            v = self.vars[i]
            out.append(np.linalg.eigvalsh(v.unpack(x[self.offsets[i]:self.offsets[i + 1]])))
        return np.concatenate(out) if out else np.array([np.inf])


def lmi_feasible(
    blocks,
    variables: Sequence[LmiVariable],
    feas_tol: float = FEAS_TOL,
    max_iter: int = 3000,
    pd_floor: float = PD_FLOOR,
    x0: Mapping[str, np.ndarray] | None = None,
    stop_margin: float | None = None,
) -> LmiSolution:
    """Find variables making the assembled block matrix negative definite.

    ``blocks`` is a callable (or list of callables, assembled block
    diagonally) mapping a dict of variable values to a symmetric matrix that
    is affine in the variables.  Equality constraints are expected to be
    eliminated by the caller through the parameterization.

    The search minimizes a log-sum-exp smoothing of ``lambda_max`` with
    L-BFGS, tightening the smoothing parameter between rounds.  Its gradient
    is the spectral subgradient ``<F_k, U diag(w) U^T>`` averaged over the
    top eigenvectors.  Positive variables carry an extra block
    ``pd_floor I - X``.

    Returns an ``LmiSolution`` with ``margin < -feas_tol`` (re-verified
    directly on the returned variables).

    Raises
    ------
    MaxIterExceeded
        No certificate within ``max_iter`` iterations.  This is evidence of
        infeasibility, not a proof; the best point is in ``.best``.
    """
    lmi = _AffineLmi(blocks, variables, pd_floor)
    stop = -(stop_margin if stop_margin is not None else 10.0 * feas_tol)

    x = np.zeros(lmi.nx)
    for i, v in enumerate(lmi.vars):
        sl = slice(lmi.offsets[i], lmi.offsets[i + 1])
        if x0 is not None and v.name in x0:
            x[sl] = v.pack(x0[v.name])
        elif v.symmetric:
            x[sl] = v.pack(np.eye(v.shape[0]))

    # positivity blocks enter the objective as extra eigenvalues pd_floor - eig(X)
    pd_slices = [slice(lmi.offsets[i], lmi.offsets[i + 1]) for i in lmi.pd_vars]

    col_norm = np.linalg.norm(lmi.Fk, axis=1)
    for i in lmi.pd_vars:
        col_norm[lmi.offsets[i]:lmi.offsets[i + 1]] = np.maximum(
            col_norm[lmi.offsets[i]:lmi.offsets[i + 1]], 1.0)
    s = 1.0 / np.where(col_norm > 0, col_norm, 1.0)

    def evaluate(x):
        lam_u, U = np.linalg.eigh(lmi.user_matrix(x))
        parts = [(lam_u, U, None)]
        for i, sl in zip(lmi.pd_vars, pd_slices):
            v = lmi.vars[i]
            lx, Ux = np.linalg.eigh(v.unpack(x[sl]))
            parts.append((pd_floor - lx, Ux, (i, sl)))
        return parts

    def certificate(x):
        user = float(np.linalg.eigvalsh(lmi.user_matrix(x))[-1])
        pdm = float(np.min(lmi.pd_eigs(x)))
        return user, pdm

    def ok(user, pdm):
        return user < -feas_tol and pdm >= pd_floor

    best = {"x": x.copy(), "score": np.inf, "user": np.inf, "pd": -np.inf}

    def record(x):
        user, pdm = certificate(x)
        score = max(user, pd_floor - pdm)
        if ok(user, pdm) and (best["score"] >= 0 or score < best["score"]):
            best.update(x=x.copy(), score=score, user=user, pd=pdm)
        elif not ok(best["user"], best["pd"]) and score < best["score"]:
            best.update(x=x.copy(), score=score, user=user, pd=pdm)
        return user, pdm

    class _Done(Exception):
        pass

    user, pdm = record(x)
    if user < stop and pdm >= pd_floor:
        return _finish(lmi, best, feas_tol, 0)

    spread = np.ptp(np.linalg.eigvalsh(lmi.user_matrix(x)))
    mu = max(1e-3 * max(1.0, spread), 0.05 * spread)
    mu_min = 0.1 * feas_tol
    iters = 0

    def fun(z):
        xx = s * z
        parts = evaluate(xx)
        lam_all = np.concatenate([p[0] for p in parts])
        top = lam_all.max()
        w_all = np.exp((lam_all - top) / mu)
        Z = w_all.sum()
        f = top + mu * np.log(Z)
        w_all /= Z
        grad = np.zeros(lmi.nx)
        off = 0
        for lam, U, tag in parts:
            w = w_all[off:off + lam.size]
            off += lam.size
            G = (U * w) @ U.T
            if tag is None:
                grad += lmi.Fk @ G.ravel()
            else:
                i, sl = tag
                v = lmi.vars[i]
                # d/dX of (pd_floor - lambda(X)) weighted: -G, packed on the triangle
                Gs = -G
                gpack = v.pack(Gs)
                r = v.shape[0]
                iu = np.triu_indices(r)
                gpack = gpack * np.where(iu[0] == iu[1], 1.0, 2.0)
                grad[sl] += gpack
        return f, grad * s

    def callback(z):
        nonlocal iters
        iters += 1
        user, pdm = record(s * z)
        if user < stop and pdm >= pd_floor:
            raise _Done
        if iters >= max_iter:
            raise _Done

    z = x / s
    try:
        while iters < max_iter:
            res = minimize(
                fun, z, jac=True, method="L-BFGS-B", callback=callback,
                options={"maxiter": max_iter - iters, "gtol": 1e-14, "ftol": 1e-15,
                         "maxcor": 30},
            )
            z = res.x
            record(s * z)
            if mu <= mu_min:
                break
            mu = max(mu * 0.1, mu_min)
            iters += 1
    except _Done:
        pass
    return _finish(lmi, best, feas_tol, iters)


def _finish(lmi, best, feas_tol, iters) -> LmiSolution:
    x = best["x"]
    vals = lmi.values(x)
    # independent re-verification on the returned variables
    margin = lmi_margin(lmi.blocks, vals)
    pdm = float(np.min(lmi.pd_eigs(x)))
    sol = LmiSolution(
        variables=vals, margin=margin, iterations=iters, min_pd_eig=pdm,
        feasible=bool(margin < -feas_tol and pdm >= lmi.pd_floor),
    )
    if not sol.feasible:
        raise MaxIterExceeded(
            f"no LMI certificate after {iters} iterations (best margin {margin:.3e})",
            best=sol,
        )
    return sol


def maximize_alpha(
    build: Callable[[float], object],
    variables: Sequence[LmiVariable],
    bracket: tuple = ALPHA_BRACKET,
    rel_width: float = ALPHA_REL_WIDTH,
    feas_tol: float = FEAS_TOL,
    max_iter: int = 3000,
    pd_floor: float = PD_FLOOR,
) -> LmiSolution:
    """Largest ``alpha`` in ``bracket`` for which ``build(alpha)`` is feasible.

    ``build(alpha)`` returns the block expression accepted by
    ``lmi_feasible``.  Bisection is geometric and returns the last feasible
    point; its ``objective`` field holds ``alpha``.

    Raises
    ------
    MaxIterExceeded
        The lower end of the bracket is not certified.
    """
    lo, hi = bracket

    def attempt(a, warm):
        try:
            return lmi_feasible(build(a), variables, feas_tol, max_iter, pd_floor, x0=warm)
        except MaxIterExceeded:
            return None

    sol_lo = attempt(lo, None)
    if sol_lo is None:
        raise MaxIterExceeded(f"LMI infeasible at the bracket floor alpha={lo:g}")
    sol_lo.objective = lo
    sol_hi = attempt(hi, sol_lo.variables)
    if sol_hi is not None:
        sol_hi.objective = hi
        return sol_hi
    while hi / lo - 1.0 > rel_width:
        mid = np.sqrt(lo * hi)
        sol = attempt(mid, sol_lo.variables)
        if sol is None:
            hi = mid
        else:
            sol.objective = mid
            lo, sol_lo = mid, sol
    return sol_lo
