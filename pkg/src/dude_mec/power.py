"""Uplink power control.

Two policies: fractional power control (the initial point and the FPC
schemes) and sum-latency optimal power allocation, which minimises
sum_k B^I_k / R_k(P).  A point P is optimal for the parametric form

    min_P  sum_k lambda_k (B^I_k - tau_k R_k(P))

when rho_k = lambda_k R_k - 1 and kappa_k = tau_k R_k - B^I_k vanish.
Rates are bounded below in the log-power domain Q = log2 P through
log2(1+g) >= mu1 log2 g + mu2, tight at the refresh point.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .mec import Assignment, _cochannel_gain_matrix

log = logging.getLogger(__name__)
LN2 = math.log(2.0)


class PowerSolverError(RuntimeError):
    """Solver failure; ``state`` holds the best iterate and the trace."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


@dataclass
class SolverParams:
    zeta: float = 0.5
    epsilon: float = 0.01
    inner_tol: float = 1e-6
    outer_tol: float = 1e-5
    max_outer: int = 100
    max_inner: int = 100
    max_armijo: int = 30
    p_floor_ratio: float = 1e-6  # p_floor = ratio * P_max
    newton_tol: float = 1e-12
    stall_window: int = 10

    def __post_init__(self):
        if not (0 < self.zeta < 1 and 0 < self.epsilon < 1):
            raise ValueError("zeta and epsilon must lie in (0, 1)")
        if min(self.inner_tol, self.outer_tol, self.newton_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if not (0 < self.p_floor_ratio < 1):
            raise ValueError("p_floor_ratio must lie in (0, 1)")
        if min(self.max_outer, self.max_inner, self.max_armijo) < 1:
            raise ValueError("iteration caps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverParams":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown solver keys: {sorted(bad)}")
        return cls(**d)


# --------------------------------------------------------------------------
# fractional power control


def fpc_power(pathloss_db, p0_dbm: float, alpha: float, pmax_dbm: float,
              p_floor_w: Optional[float] = None):
    """min(P_max, alpha * PL + P0) evaluated in dBm, returned in watts."""
    dbm = np.minimum(pmax_dbm, alpha * np.asarray(pathloss_db, dtype=float) + p0_dbm)
    p = 10.0 ** ((dbm - 30.0) / 10.0)
    if p_floor_w is not None:
        p = np.maximum(p, p_floor_w)
    return float(p) if np.ndim(p) == 0 else p


def fpc_power_matrix(channels, cfg, params: SolverParams = SolverParams()) -> np.ndarray:
    """FPC power (W) of every MD toward every station, shape (K, M+1)."""
    pmax_w = 10.0 ** ((cfg.md_max_power - 30.0) / 10.0)
    return fpc_power(channels.pathloss, cfg.fpc_p0, cfg.fpc_alpha, cfg.md_max_power,
                     pmax_w * params.p_floor_ratio)


def fpc_ul_powers(assignment: Assignment, channels, cfg,
                  params: SolverParams = SolverParams()) -> np.ndarray:
    """Per-MD FPC power toward its UL serving station (0 for unserved MDs)."""
    mat = fpc_power_matrix(channels, cfg, params)
    k = np.arange(assignment.n_devices)
    served = assignment.ul_served
    return np.where(served, mat[k, np.where(served, assignment.ul_bs, 0)], 0.0)


# --------------------------------------------------------------------------
# the fixed-assignment UL problem


class UplinkProblem:
    """UL power problem for a fixed association/subchannel assignment.

    Only UL-served MDs take part; vectors are indexed over ``self.idx``.
    """

    def __init__(self, assignment: Assignment, channels, input_bits, p_max,
                 params: SolverParams = SolverParams()):
        self.assignment = assignment
        self.idx = np.flatnonzero(assignment.ul_served)
        idx = self.idx
        bs, sub = assignment.ul_bs, assignment.ul_sub
        self.signal_gain = channels.ul[idx, bs[idx], sub[idx]]
        self.cross = _cochannel_gain_matrix(channels.ul, bs, sub)[np.ix_(idx, idx)]
        self.bits = np.asarray(input_bits, dtype=float)[idx]
        p_max = np.broadcast_to(np.asarray(p_max, dtype=float), (assignment.n_devices,))
        self.p_max = p_max[idx].copy()
        self.p_min = self.p_max * params.p_floor_ratio
        self.bandwidth = channels.ul_bandwidth
        self.noise = channels.ul_noise
        self.q_lo = np.log2(self.p_min)
        self.q_hi = np.log2(self.p_max)

    @property
    def size(self) -> int:
        return len(self.idx)

    def clip(self, p):
        return np.clip(p, self.p_min, self.p_max)

    def interference(self, p):
        return p @ self.cross

    def sinr(self, p):
        return p * self.signal_gain / (self.interference(p) + self.noise)

    def rates(self, p):
        return self.bandwidth * np.log2(1.0 + self.sinr(p))

    def sum_latency(self, p) -> float:
        return float(np.sum(self.bits / self.rates(p)))

    def expand(self, p_sub, fill=0.0) -> np.ndarray:
        """Scatter served-MD values back to a length-K array."""
        out = np.full(self.assignment.n_devices, fill, dtype=float)
        out[self.idx] = p_sub
        return out


def sca_coefficients(sinr):
    """Bound coefficients (mu1, mu2) tight at ``sinr``."""
    sinr = np.asarray(sinr, dtype=float)
    mu1 = sinr / (1.0 + sinr)
    mu2 = np.log2(1.0 + sinr) - mu1 * np.log2(sinr)
    return mu1, mu2


def surrogate_rates(problem: UplinkProblem, q, mu1, mu2):
    """Concave lower bound on every rate, as a function of Q = log2 P."""
    p = np.exp2(q)
    denom = problem.interference(p) + problem.noise
    log_sinr = q + np.log2(problem.signal_gain) - np.log2(denom)
    return problem.bandwidth * (mu1 * log_sinr + mu2)


def surrogate_objective(problem: UplinkProblem, q, lam, tau, mu1, mu2) -> float:
    return float(np.sum(lam * (problem.bits - tau * surrogate_rates(problem, q, mu1, mu2))))


def surrogate_gradient(problem: UplinkProblem, q, lam, tau, mu1, mu2):
    c = lam * tau * problem.bandwidth * mu1
    p = np.exp2(q)
    denom = problem.interference(p) + problem.noise
    return -c + p * (problem.cross @ (c / denom))


def surrogate_hessian(problem: UplinkProblem, q, lam, tau, mu1, mu2):
    c = lam * tau * problem.bandwidth * mu1
    p = np.exp2(q)
    denom = problem.interference(p) + problem.noise
    a = p[:, None] * problem.cross  # a[i, k] = P_i G[i, k]
    diag = p * (problem.cross @ (c / denom))
    return LN2 * (np.diag(diag) - (a * (c / denom ** 2)) @ a.T)


def _minimize_box(fun, grad, hess, x0, lo, hi, tol, max_iter=200):
    """Projected Newton on a box for a smooth convex function."""
    x = np.clip(x0, lo, hi)
    f = fun(x)
    for _ in range(max_iter):
        g = grad(x)
        pg = x - np.clip(x - g, lo, hi)
        if np.max(np.abs(pg), initial=0.0) <= tol:
            break
        eps = min(1e-6, float(np.max(np.abs(pg))))
        active = ((x <= lo + eps) & (g > 0)) | ((x >= hi - eps) & (g < 0))
        free = ~active
        d = np.zeros_like(x)
        if np.any(free):
            H = hess(x)[np.ix_(free, free)]
            reg = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)), initial=0.0)))
            try:
                L = np.linalg.cholesky(H + reg * np.eye(H.shape[0]))
                d[free] = -np.linalg.solve(L.T, np.linalg.solve(L, g[free]))
            except np.linalg.LinAlgError:
                d[free] = -g[free]
        else:
            d = -g
        step, accepted = 1.0, False
        while step > 1e-16:
            xn = np.clip(x + step * d, lo, hi)
            fn = fun(xn)
            if fn <= f + 1e-4 * float(g @ (xn - x)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # Newton direction exhausted; try a plain projected-gradient step
            step = 1.0
            while step > 1e-16:
                xn = np.clip(x - step * g, lo, hi)
                fn = fun(xn)
                if fn < f:
                    accepted = True
                    break
                step *= 0.5
        if not accepted or np.array_equal(xn, x):
            break
        x, f = xn, fn
    return x


@dataclass
class InnerResult:
    p: np.ndarray
    q: np.ndarray
    mu1: np.ndarray  # refreshed at the returned point
    mu2: np.ndarray
    objective: list  # L-bar after each iteration; entry 0 is the initial point
    iterations: int
    converged: bool


def solve_inner_sca(lam, tau, problem: UplinkProblem, p_start,
                    params: SolverParams = SolverParams()) -> InnerResult:
    """Minimise sum_k lam_k (B^I_k - tau_k R_k(P)) by SCA.

    Starts with mu1 = 1, mu2 = 0 to score the initial point, then alternates
    a coefficient refresh at the current SINR and an exact convex solve,
    until the surrogate objective changes by at most ``inner_tol`` relative
    to its magnitude (absolute below 1).
    """
    lam = np.asarray(lam, dtype=float)
    tau = np.asarray(tau, dtype=float)
    q = np.log2(problem.clip(np.asarray(p_start, dtype=float)))
    mu1 = np.ones(problem.size)
    mu2 = np.zeros(problem.size)
    history = [surrogate_objective(problem, q, lam, tau, mu1, mu2)]
    converged = False
    it = 0
    for it in range(1, params.max_inner + 1):
        mu1, mu2 = sca_coefficients(problem.sinr(np.exp2(q)))
        args = (lam, tau, mu1, mu2)
        try:
            q = _minimize_box(lambda x: surrogate_objective(problem, x, *args),
                              lambda x: surrogate_gradient(problem, x, *args),
                              lambda x: surrogate_hessian(problem, x, *args),
                              q, problem.q_lo, problem.q_hi, params.newton_tol)
        except (FloatingPointError, ValueError) as exc:
            raise PowerSolverError(f"convex solve failed at SCA iteration {it}: {exc}",
                                   {"q": q, "mu1": mu1, "mu2": mu2, "objective": history})
        history.append(surrogate_objective(problem, q, *args))
        # relative test: the objective scales with lambda * tau * R
        if abs(history[-1] - history[-2]) <= params.inner_tol * max(1.0, abs(history[-2])):
            converged = True
            break
    if not converged:
        log.warning("SCA hit max_inner=%d without meeting inner_tol", params.max_inner)
    # coefficients refreshed at the returned point, where the bound is tight
    mu1, mu2 = sca_coefficients(problem.sinr(np.exp2(q)))
    return InnerResult(np.exp2(q), q, mu1, mu2, history, it, converged)


def _majorizer(problem: UplinkProblem, mu1, mu2):
    """Convex upper bound sum_k B^I_k / Rbar_k(Q) of the sum latency.

    Rbar is concave in Q, so each ratio is convex where Rbar > 0; the bound
    is tight (value and gradient) at the point where mu was refreshed.
    """
    bits, ones = problem.bits, np.ones(problem.size)

    def fun(q):
        r = surrogate_rates(problem, q, mu1, mu2)
        if np.any(r <= 0):
            return math.inf
        return float(np.sum(bits / r))

    def grad(q):
        w = bits / surrogate_rates(problem, q, mu1, mu2) ** 2
        return surrogate_gradient(problem, q, w, ones, mu1, mu2)

    def hess(q):
        r = surrogate_rates(problem, q, mu1, mu2)
        w = bits / r ** 2
        p = np.exp2(q)
        denom = problem.interference(p) + problem.noise
        jac = -(problem.bandwidth * mu1 / denom)[:, None] * (p[None, :] * problem.cross.T)
        jac[np.diag_indices_from(jac)] += problem.bandwidth * mu1
        h = surrogate_hessian(problem, q, w, ones, mu1, mu2)
        return h + (jac.T * (2.0 * bits / r ** 3)) @ jac

    return fun, grad, hess


@dataclass
class OuterStep:
    iteration: int
    residual_before: float  # sum rho^2 + kappa^2 at old (lambda, tau), new P
    residual_after: float
    armijo_exponent: int
    armijo_ok: bool
    majorizer: float  # sum_k B^I_k / Rbar_k at the new P
    sum_latency: float


@dataclass
class PowerResult:
    p: np.ndarray  # length K, zero for unserved MDs
    lam: np.ndarray
    tau: np.ndarray
    residual: float
    converged: bool
    mu1: np.ndarray = None  # bound coefficients of the last P-step
    mu2: np.ndarray = None
    trace: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def p_served(self, problem: UplinkProblem) -> np.ndarray:
        return self.p[problem.idx]


def _residuals(lam, tau, rates, bits):
    return lam * rates - 1.0, tau * rates - bits


def solve_optimal_power(problem: UplinkProblem, params: SolverParams = SolverParams(),
                        p_init=None) -> PowerResult:
    """Sum-latency power allocation for a fixed UL assignment.

    Each outer iteration refreshes (mu1, mu2) at the current SINRs and moves
    P to the minimiser of the convex majoriser sum B^I / Rbar(Q), so the sum
    latency never increases.  (lambda, tau) follow the damped Newton update
    with the Armijo-type exponent search, and the loop stops once
    sum(rho^2 + kappa^2) <= outer_tol^2.  At that point P is a stationary
    point of the parametric problem at (lambda, tau).

    ``p_init`` is length-K (e.g. FPC powers); only served entries are used.
    """
    if problem.size == 0:
        empty = np.zeros(0)
        return PowerResult(problem.expand(empty), empty, empty, 0.0, True, empty, empty)
    if p_init is None:
        p = problem.p_max.copy()
    else:
        p = problem.clip(np.asarray(p_init, dtype=float)[problem.idx])
    rates = problem.rates(p)
    lam = 1.0 / rates
    tau = problem.bits / rates
    q = np.log2(p)
    zeta, eps = params.zeta, params.epsilon
    target = params.outer_tol ** 2
    result = PowerResult(problem.expand(p), lam, tau, math.inf, False)
    best = math.inf
    stall = 0
    after = math.inf
    for t in range(1, params.max_outer + 1):
        mu1, mu2 = sca_coefficients(problem.sinr(np.exp2(q)))
        fun, grad, hess = _majorizer(problem, mu1, mu2)
        try:
            q = _minimize_box(fun, grad, hess, q, problem.q_lo, problem.q_hi, params.newton_tol)
        except (FloatingPointError, ValueError) as exc:
            raise PowerSolverError(f"convex P-step failed at outer iteration {t}: {exc}",
                                   {"p": problem.expand(np.exp2(q)), "lam": lam, "tau": tau,
                                    "trace": result.trace})
        p = np.exp2(q)
        rates = problem.rates(p)
        rho, kappa = _residuals(lam, tau, rates, problem.bits)
        before = float(np.sum(rho ** 2 + kappa ** 2))
        ok = False
        for i in range(1, params.max_armijo + 1):
            step = zeta ** i
            lam_n = lam - step * rho / rates
            tau_n = tau - step * kappa / rates
            rho_n, kappa_n = _residuals(lam_n, tau_n, rates, problem.bits)
            after = float(np.sum(rho_n ** 2 + kappa_n ** 2))
            if after <= (1.0 - eps * step) ** 2 * before:
                ok = True
                break
        if not ok:
            target = max(target, 0.5 * before)
            msg = (f"outer step {t}: no Armijo exponent <= {params.max_armijo}; "
                   f"target now {target:.3e}")
            log.warning(msg)
            result.warnings.append(msg)
        lam, tau = lam_n, tau_n
        result.trace.append(OuterStep(t, before, after, i, ok, fun(q), problem.sum_latency(p)))
        result.mu1, result.mu2 = mu1, mu2
        if after < best:
            best, stall = after, 0
        else:
            stall += 1
        if after <= target:
            result.converged = True
            break
        if stall >= params.stall_window:
            raise PowerSolverError(
                f"residual did not decrease for {stall} outer iterations",
                {"p": problem.expand(p), "lam": lam, "tau": tau, "residual": after,
                 "trace": result.trace})
    if not result.converged:
        msg = f"max_outer={params.max_outer} reached, residual {after:.3e}"
        log.warning(msg)
        result.warnings.append(msg)
    result.p = problem.expand(p)
    result.lam, result.tau, result.residual = lam, tau, after
    return result


def kkt_residuals(p, lam, tau, problem: UplinkProblem, rel_step: float = 1e-6) -> dict:
    """Per-MD KKT diagnostics of the epigraph problem at served-MD powers ``p``.

    ``stationarity`` is the box-projected derivative of the Lagrangian with
    respect to P_k, scaled by P_k (i.e. per unit of log-power), obtained by
    central finite differences.
    """
    p = np.asarray(p, dtype=float)
    lam = np.asarray(lam, dtype=float)
    tau = np.asarray(tau, dtype=float)
    rates = problem.rates(p)
    w = lam * tau

    def lagr(x):
        return float(np.sum(tau) + np.sum(lam * problem.bits) - np.sum(w * problem.rates(x)))

    grad = np.empty_like(p)
    for k in range(p.size):
        h = rel_step * p[k]
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        grad[k] = (lagr(up) - lagr(dn)) / (2 * h)
    at_hi = p >= problem.p_max * (1 - 1e-9)
    at_lo = p <= problem.p_min * (1 + 1e-9)
    proj = np.where(at_hi, np.maximum(grad, 0.0), np.where(at_lo, np.minimum(grad, 0.0), grad))
    return {
        "rho": np.abs(1.0 - lam * rates),
        "kappa": np.abs(problem.bits - tau * rates),
        "stationarity": np.abs(proj) * p,
        "slack": np.minimum(p - problem.p_min, problem.p_max - p),
    }


def write_trace_csv(result: PowerResult, path) -> None:
    cols = [f.name for f in fields(OuterStep)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for step in result.trace:
            w.writerow([getattr(step, c) for c in cols])
