"""Centralised reference computations for the voltage-control dual.

Everything here sees the whole network at once and serves as ground truth
for the distributed controller: the dual function and its gradient,
synchronous projected dual ascent, KKT residuals, step-size constants,
and checkers that replay recorded runs against the convergence bounds.

``v0`` arguments may be a scalar substation voltage or a per-bus
baseline that already includes the effect of fixed loads (see
:func:`baseline_voltage`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .agent import CostParams, Limits
from .network import RadialNetwork, SensitivityMatrices


class NoConvergence(RuntimeError):
    def __init__(self, max_iter, step):
        self.max_iter = max_iter
        super().__init__(f"dual ascent did not converge in {max_iter} iterations (last step {step:.3e})")


class HistoryTooShort(ValueError):
    pass


@dataclass(frozen=True)
class DualPoint:
    lam_lo: np.ndarray
    lam_hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam_lo", np.asarray(self.lam_lo, dtype=float))
        object.__setattr__(self, "lam_hi", np.asarray(self.lam_hi, dtype=float))
        if np.any(self.lam_lo < 0) or np.any(self.lam_hi < 0):
            raise ValueError("dual variables must be non-negative")

    @property
    def lam(self) -> np.ndarray:
        return self.lam_lo - self.lam_hi

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.lam_lo, self.lam_hi])

    @classmethod
    def from_stacked(cls, vec) -> "DualPoint":
        vec = np.asarray(vec, dtype=float)
        n = vec.size // 2
        return cls(vec[:n], vec[n:])

    @classmethod
    def zeros(cls, n) -> "DualPoint":
        return cls(np.zeros(n), np.zeros(n))


def baseline_voltage(sens: SensitivityMatrices, v0, p_load=None, q_load=None) -> np.ndarray:
    """Voltage with zero controllable injection: ``v0 + R p_load + X q_load``."""
    base = np.full(sens.n, float(v0))
    if p_load is not None:
        base = base + sens.R @ np.asarray(p_load, dtype=float)
    if q_load is not None:
        base = base + sens.X @ np.asarray(q_load, dtype=float)
    return base


# ----------------------------------------------------------------------
# Constants


def spectral_norm(A, tol=1e-12, max_iter=100_000) -> float:
    """Largest eigenvalue magnitude of a symmetric matrix by power iteration."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    x = np.ones(A.shape[0]) / math.sqrt(A.shape[0])
    est = 0.0
    for _ in range(max_iter):
        y = A @ x
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est


def lipschitz_constant(sens: SensitivityMatrices, costs: CostParams) -> float:
    """``2 (||R||^2 + ||X||^2) / a_min`` with spectral norms."""
    nr = spectral_norm(sens.R)
    nx = spectral_norm(sens.X)
    return 2.0 * (nr * nr + nx * nx) / costs.a_min


def step_size_bounds(N, d, tau_max, L) -> dict:
    """Upper step-size limits implied by the three forms of the delay constant.

    ``headline`` is the bound quoted for convergence; ``descent`` makes the
    coefficient in the dual-increase inequality positive as stated;
    ``proof`` does the same with the constant its derivation uses.
    """
    rn = math.sqrt(N)
    return {
        "headline": 2.0 / ((1.0 + ((tau_max + 1) * d + 1) * rn) * L),
        "descent": 1.0 / (L / 2.0 + (tau_max * (d + 1) + 1) * L * rn),
        "proof": 1.0 / (L / 2.0 + (d * (tau_max + 1) + 1) * L * rn),
    }


@dataclass(frozen=True)
class Constants:
    L: float
    d: int
    N: int
    tau_max: int
    t0: int
    gamma_max: float
    bounds: dict = field(default_factory=dict)

    @property
    def gamma_default(self) -> float:
        return 0.9 * self.gamma_max

    @property
    def gamma_conservative(self) -> float:
        """Smallest of the three step-size limits."""
        return min(self.bounds.values()) if self.bounds else self.gamma_max

    @property
    def descent_coefficient_factor(self) -> float:
        """``tau_max (d + 1) + 1`` as used in the dual-increase inequality."""
        return self.tau_max * (self.d + 1) + 1


def compute_constants(network: RadialNetwork, costs: CostParams, tau_max=0,
                      sens: SensitivityMatrices | None = None) -> Constants:
    sens = sens if sens is not None else network.sensitivity()
    L = lipschitz_constant(sens, costs)
    d = network.diameter()
    N = network.N
    bounds = step_size_bounds(N, d, tau_max, L)
    return Constants(L=L, d=d, N=N, tau_max=tau_max, t0=d * (tau_max + 1),
                     gamma_max=bounds["headline"], bounds=bounds)


# ----------------------------------------------------------------------
# Dual function


def primal_from_dual(dp: DualPoint, sens: SensitivityMatrices, costs: CostParams, limits: Limits):
    """Box-constrained Lagrangian minimiser ``clamp((M lam - b) / a)``."""
    lam = dp.lam
    p = np.clip((sens.R @ lam - costs.b_p) / costs.a_p, limits.p_lo, limits.p_hi)
    q = np.clip((sens.X @ lam - costs.b_q) / costs.a_q, limits.q_lo, limits.q_hi)
    return p, q


def lagrangian(p, q, dp: DualPoint, sens, costs: CostParams, limits: Limits, v0) -> float:
    v = sens.R @ p + sens.X @ q + v0
    return (costs.total(p, q) + float(dp.lam_lo @ (limits.v_lo - v))
            + float(dp.lam_hi @ (v - limits.v_hi)))


def dual_value(dp: DualPoint, sens, costs, limits, v0) -> float:
    p, q = primal_from_dual(dp, sens, costs, limits)
    return lagrangian(p, q, dp, sens, costs, limits, v0)


def dual_grad(dp: DualPoint, sens, costs, limits, v0) -> np.ndarray:
    """Stacked ``(v_lo - v(lam), v(lam) - v_hi)``."""
    p, q = primal_from_dual(dp, sens, costs, limits)
    v = sens.R @ p + sens.X @ q + v0
    return np.concatenate([limits.v_lo - v, v - limits.v_hi])


def fd_dual_grad(dp: DualPoint, sens, costs, limits, v0, h=1e-6) -> np.ndarray:
    """Central differences of the dual function, ordered like :meth:`DualPoint.stacked`.

    The closed form extends to slightly negative prices, so coordinates
    sitting at zero are handled without one-sided stencils.
    """
    lam = dp.stacked()
    n = lam.size // 2

    def value(vec):
        lv = vec[:n] - vec[n:]
        p = np.clip((sens.R @ lv - costs.b_p) / costs.a_p, limits.p_lo, limits.p_hi)
        q = np.clip((sens.X @ lv - costs.b_q) / costs.a_q, limits.q_lo, limits.q_hi)
        v = sens.R @ p + sens.X @ q + v0
        return costs.total(p, q) + vec[:n] @ (limits.v_lo - v) + vec[n:] @ (v - limits.v_hi)

    out = np.empty_like(lam)
    for k in range(lam.size):
        e = np.zeros_like(lam)
        e[k] = h
        out[k] = (value(lam + e) - value(lam - e)) / (2.0 * h)
    return out


def gradient_lipschitz(sens, costs) -> float:
    """A tighter valid Lipschitz constant of the dual gradient.

    The unclamped response is linear in ``lam`` with Jacobian
    ``R A_p^-1 R + X A_q^-1 X``; clamping is non-expansive and the stacked
    duals double the norm.
    """
    H = sens.R @ (sens.R / costs.a_p[:, None]) + sens.X @ (sens.X / costs.a_q[:, None])
    return 2.0 * spectral_norm(0.5 * (H + H.T))


@dataclass
class OracleSolution:
    p: np.ndarray
    q: np.ndarray
    dual: DualPoint
    iterations: int
    gamma: float

    @property
    def lam(self):
        return self.dual.lam


def centralized_solve(sens, costs, limits, v0, gamma=None, tol=1e-10, max_iter=2_000_000,
                      dual0: DualPoint | None = None) -> OracleSolution:
    """Synchronous projected dual ascent ``lam <- [lam + gamma grad D(lam)]_+``.

    Stops when the infinity norm of the dual step is at most ``tol``. The
    default step is ``1 / L'`` with ``L'`` from :func:`gradient_lipschitz`.
    """
    if gamma is None:
        gamma = 1.0 / gradient_lipschitz(sens, costs)
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    n = sens.n
    lam = (dual0 or DualPoint.zeros(n)).stacked()
    R, X = sens.R, sens.X
    v_lo, v_hi = limits.v_lo, limits.v_hi
    step = math.inf
    for it in range(1, max_iter + 1):
        lvec = lam[:n] - lam[n:]
        p = np.clip((R @ lvec - costs.b_p) / costs.a_p, limits.p_lo, limits.p_hi)
        q = np.clip((X @ lvec - costs.b_q) / costs.a_q, limits.q_lo, limits.q_hi)
        v = R @ p + X @ q + v0
        new = np.maximum(0.0, lam + gamma * np.concatenate([v_lo - v, v - v_hi]))
        step = float(np.max(np.abs(new - lam)))
        lam = new
        if step <= tol:
            dp = DualPoint.from_stacked(lam)
            p, q = primal_from_dual(dp, sens, costs, limits)
            return OracleSolution(p, q, dp, it, gamma)
    raise NoConvergence(max_iter, step)


def kkt_residual(p, q, dp: DualPoint, sens, costs, limits, v0) -> dict:
    """Infinity-norm KKT residuals for the box-constrained voltage problem.

    ``stationarity`` is the projected-gradient residual
    ``||u - clamp(u - grad_u L)||``; the other entries are primal and dual
    feasibility and complementary slackness. ``max`` is the largest.
    """
    lam = dp.lam
    gp = costs.a_p * p + costs.b_p - sens.R @ lam
    gq = costs.a_q * q + costs.b_q - sens.X @ lam
    stat = max(np.max(np.abs(p - np.clip(p - gp, limits.p_lo, limits.p_hi)), initial=0.0),
               np.max(np.abs(q - np.clip(q - gq, limits.q_lo, limits.q_hi)), initial=0.0))
    v = sens.R @ p + sens.X @ q + v0
    box = max(np.max(np.maximum(0, limits.p_lo - p), initial=0.0),
              np.max(np.maximum(0, p - limits.p_hi), initial=0.0),
              np.max(np.maximum(0, limits.q_lo - q), initial=0.0),
              np.max(np.maximum(0, q - limits.q_hi), initial=0.0))
    volt = max(np.max(np.maximum(0, limits.v_lo - v), initial=0.0),
               np.max(np.maximum(0, v - limits.v_hi), initial=0.0))
    dual = max(np.max(np.maximum(0, -dp.lam_lo), initial=0.0),
               np.max(np.maximum(0, -dp.lam_hi), initial=0.0))
    comp = max(np.max(np.abs(dp.lam_lo * (limits.v_lo - v)), initial=0.0),
               np.max(np.abs(dp.lam_hi * (v - limits.v_hi)), initial=0.0))
    res = {"stationarity": float(stat), "box": float(box), "voltage": float(volt),
           "dual": float(dual), "complementarity": float(comp)}
    res["max"] = max(res.values())
    return res


# ----------------------------------------------------------------------
# Delayed-sum identities


def structural_lags(network: RadialNetwork) -> np.ndarray:
    """Zero-delay lags ``max(dist(i, j) - 1, 0)`` over non-root buses."""
    N = network.N
    out = np.zeros((N, N), dtype=int)
    for i in range(1, N + 1):
        for j in range(1, N + 1):
            out[i - 1, j - 1] = max(network.dist(i, j) - 1, 0)
    return out


def zero_delay_sums(lam_hist, sens: SensitivityMatrices, network: RadialNetwork):
    """Explicit delayed sums ``sum_j M_ij lam_j(t - lag_ij)`` for every recorded ``t``.

    ``lam_hist`` has one row per time index starting at ``t = 0``; earlier
    values are zero. Returns ``(z_p, z_q)`` with the same shape.
    """
    lam_hist = np.asarray(lam_hist, dtype=float)
    if lam_hist.ndim != 2 or lam_hist.shape[0] == 0:
        raise HistoryTooShort("need a non-empty (T, N) price history")
    T, N = lam_hist.shape
    lags = structural_lags(network)
    cols = np.arange(N)
    zp = np.zeros((T, N))
    zq = np.zeros((T, N))
    for t in range(T):
        idx = t - lags
        vals = np.where(idx >= 0, lam_hist[np.maximum(idx, 0), cols[None, :]], 0.0)
        zp[t] = np.sum(sens.R * vals, axis=1)
        zq[t] = np.sum(sens.X * vals, axis=1)
    return zp, zq


@dataclass
class LagReport:
    """Outcome of replaying a delayed run's delivery record.

    ``lags[t, i, j]`` is the age of the price of bus ``j+1`` contained in
    ``z_i(t)``. ``z_p``/``z_q`` are the explicit sums those lags imply.
    """

    lags: np.ndarray
    z_p: np.ndarray
    z_q: np.ndarray
    bound: int
    max_lag: int
    duplicates: int

    @property
    def within_bound(self) -> bool:
        return self.max_lag <= self.bound and self.duplicates == 0


def delayed_sums(lam_hist, alpha_gen, beta_gen, sens, network: RadialNetwork, tau_max) -> LagReport:
    """Recover the per-pair price ages implied by a recorded delivery history.

    ``alpha_gen[t, c-1]`` is the generation index of the upstream message
    from child ``c`` held by its parent at time ``t``; ``beta_gen[t, i-1]``
    is that of the downstream message held by bus ``i``. Each message is
    unfolded through the update rules into the set of ``(bus, time)``
    prices it carries, which gives the age of every price in ``z_i(t)``.
    The explicit sums use the full sensitivity matrices, so a recursion
    that weighted terms wrongly would not reproduce them.
    """
    lam_hist = np.asarray(lam_hist, dtype=float)
    T, N = lam_hist.shape
    alpha_gen = np.asarray(alpha_gen)
    beta_gen = np.asarray(beta_gen)
    if alpha_gen.shape[0] < T or beta_gen.shape[0] < T:
        raise HistoryTooShort("delivery record shorter than the price history")
    parent = network.parent
    children = network.children
    memo_a = {}
    memo_b = {}

    def alpha_set(c, g):
        if g <= 0:
            return {}
        key = (c, g)
        if key not in memo_a:
            out = {c: g}
            for k in children[c]:
                out.update(alpha_set(k, int(alpha_gen[g - 1, k - 1])))
            memo_a[key] = out
        return memo_a[key]

    def beta_set(i, g):
        sigma = int(parent[i])
        if g <= 0 or sigma == 0:
            return {}
        key = (i, g)
        if key not in memo_b:
            out = {sigma: g}
            for r in children[sigma]:
                if r != i:
                    out.update(alpha_set(r, int(alpha_gen[g - 1, r - 1])))
            out.update(beta_set(sigma, int(beta_gen[g - 1, sigma - 1])))
            memo_b[key] = out
        return memo_b[key]

    # Buses in different substation branches never exchange prices.
    coupled = np.array([[network.mrca(i, j) != 0 for j in range(1, N + 1)]
                        for i in range(1, N + 1)], dtype=bool).reshape(N, N)
    lags = np.zeros((T, N, N), dtype=int)
    zp = np.zeros((T, N))
    zq = np.zeros((T, N))
    dup = 0
    cols = np.arange(N)
    for t in range(T):
        for i in range(1, N + 1):
            stamps = {i: t}
            count = 1
            for c in children[i]:
                part = alpha_set(c, int(alpha_gen[t, c - 1]))
                count += len(part)
                stamps.update(part)
            part = beta_set(i, int(beta_gen[t, i - 1]))
            count += len(part)
            stamps.update(part)
            dup += count - len(stamps)
            when = np.zeros(N, dtype=int)  # missing buses carry lam(0) = 0
            for j, s in stamps.items():
                when[j - 1] = s
            lags[t, i - 1] = np.where(coupled[i - 1], t - when, 0)
            vals = lam_hist[when, cols]
            zp[t, i - 1] = sens.R[i - 1] @ vals
            zq[t, i - 1] = sens.X[i - 1] @ vals
    bound = (tau_max + 1) * network.diameter()
    return LagReport(lags, zp, zq, bound, int(lags.max(initial=0)), dup)


# ----------------------------------------------------------------------
# Descent checks


def approximate_gradient(v_hist, limits: Limits) -> np.ndarray:
    """Stacked ``(v_lo - v(t), v(t) - v_hi)`` for each recorded voltage row."""
    v_hist = np.asarray(v_hist, dtype=float)
    return np.concatenate([limits.v_lo - v_hist, v_hist - limits.v_hi], axis=1)


@dataclass
class DescentReport:
    gradient_margin: float  # min over t of (bound - error), gradient-error inequality
    descent_margin: float  # min over t of (lhs - rhs), dual-increase inequality
    tail_step: float
    sum_sq_steps: float
    gradient_violations: list
    descent_violations: list
    coefficient: float

    @property
    def ok(self) -> bool:
        return not self.gradient_violations and not self.descent_violations


def verify_descent(lam_lo_hist, lam_hi_hist, v_hist, gamma, constants: Constants, sens, costs,
                   limits, v0, atol=1e-12, rtol=1e-10) -> DescentReport:
    """Check the gradient-error and dual-increase inequalities along a recorded run.

    ``lam_*_hist`` hold ``lam(0) ... lam(T)``; ``v_hist`` holds the
    voltages ``v(0) ... v(T-1)`` the prices were updated from (linear
    physics, no noise). Inequalities are compared with a small floating
    slack ``atol + rtol * |rhs|``.
    """
    lam = np.concatenate([np.asarray(lam_lo_hist), np.asarray(lam_hi_hist)], axis=1)
    T = lam.shape[0] - 1
    if T < 1 or np.asarray(v_hist).shape[0] < T:
        raise HistoryTooShort("need at least one recorded update")
    g = approximate_gradient(np.asarray(v_hist)[:T], limits)
    steps = np.linalg.norm(np.diff(lam, axis=0), axis=1)
    L, N, t0 = constants.L, constants.N, constants.t0
    coef = 1.0 / gamma - L / 2.0 - constants.descent_coefficient_factor * L * math.sqrt(N)

    d_vals = np.array([dual_value(DualPoint.from_stacked(lam[t]), sens, costs, limits, v0)
                       for t in range(T + 1)])
    csum_steps = np.concatenate([[0.0], np.cumsum(steps)])
    cum_sq = np.cumsum(steps ** 2)

    grad_viol, desc_viol = [], []
    gmargin = math.inf
    dmargin = math.inf
    for t in range(T):
        true_g = dual_grad(DualPoint.from_stacked(lam[t]), sens, costs, limits, v0)
        err = float(np.linalg.norm(true_g - g[t]))
        lo = max(t - t0, 0)
        bound = L * math.sqrt(N) * (csum_steps[t] - csum_steps[lo])
        m = bound - err
        gmargin = min(gmargin, m)
        if m < -(atol + rtol * abs(bound)):
            grad_viol.append((t, err, bound))
        rhs = d_vals[0] + coef * cum_sq[t]
        m = d_vals[t + 1] - rhs
        dmargin = min(dmargin, m)
        if m < -(atol + rtol * max(abs(rhs), abs(d_vals[t + 1]))):
            desc_viol.append((t, float(d_vals[t + 1]), float(rhs)))
    return DescentReport(gmargin, dmargin, float(steps[-1]), float(cum_sq[-1]),
                         grad_viol, desc_viol, coef)
