"""Voltage computation: linear DistFlow and the full radial branch-flow model.

All voltages are squared magnitudes (p.u.^2). Injections are positive
when power flows into the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import RadialNetwork, SensitivityMatrices


class PhysicsDiverged(RuntimeError):
    """The branch-flow solve failed; the operating point is outside its basin."""


class NoConvergence(PhysicsDiverged):
    def __init__(self, max_iter, residual):
        self.max_iter = max_iter
        self.residual = residual
        super().__init__(f"branch-flow sweep did not converge in {max_iter} iterations "
                         f"(last update {residual:.3e})")


class NonPhysicalVoltage(PhysicsDiverged):
    def __init__(self, bus, v):
        self.bus = bus
        super().__init__(f"squared voltage {v:.4g} <= 0 at bus {bus}")


class DimensionMismatch(ValueError):
    pass


@dataclass
class BranchFlowState:
    """Converged branch-flow solution. Line quantities are indexed by child bus - 1."""

    P: np.ndarray
    Q: np.ndarray
    l: np.ndarray
    v: np.ndarray
    v0: float
    iterations: int = 0


def linear_voltage(sens: SensitivityMatrices, p, q, v0) -> np.ndarray:
    """``v = R p + X q + v0``; ``v0`` may be a scalar or a per-bus offset."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape[-1] != sens.n or q.shape[-1] != sens.n:
        raise DimensionMismatch(f"expected length-{sens.n} injections, got {p.shape} and {q.shape}")
    return sens.R @ p + sens.X @ q + v0


def solve_branch_flow(network: RadialNetwork, p, q, v0, tol=1e-10, max_iter=100) -> BranchFlowState:
    """Backward/forward sweep on the radial branch-flow equations.

    Starts from ``l = 0`` (the linear DistFlow point). Each iteration
    accumulates line flows from the leaves using the current losses,
    propagates voltages from the root, then recomputes squared currents.
    Stops when the current update is below ``tol``; at that point the
    flow-balance and voltage-drop equations hold to rounding and the
    current equation holds to ``tol``.
    """
    N = network.N
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (N,) or q.shape != (N,):
        raise DimensionMismatch(f"expected length-{N} injections, got {p.shape} and {q.shape}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    T = network.descendant_matrix()
    r = network.r[1:]
    x = network.x[1:]
    z2 = r * r + x * x
    par = network.parent[1:] - 1  # -1 marks the substation
    at_root = par < 0
    par_idx = np.where(at_root, 0, par)

    l = np.zeros(N)
    for it in range(1, max_iter + 1):
        P = T @ (r * l - p)
        Q = T @ (x * l - q)
        drop = z2 * l - 2.0 * (r * P + x * Q)
        v = v0 + T.T @ drop
        if np.any(v <= 0):
            k = int(np.argmin(v))
            raise NonPhysicalVoltage(k + 1, float(v[k]))
        v_send = np.where(at_root, v0, v[par_idx])
        l_new = (P * P + Q * Q) / v_send
        change = float(np.max(np.abs(l_new - l))) if N else 0.0
        if change <= tol:
            return BranchFlowState(P, Q, l, v, float(v0), it)
        l = l_new
    raise NoConvergence(max_iter, change)


def branch_flow_residuals(network: RadialNetwork, state: BranchFlowState, p, q) -> dict:
    """Infinity-norm residuals of the four branch-flow equations, bus by bus."""
    res = {"active": 0.0, "reactive": 0.0, "voltage": 0.0, "current": 0.0}
    P, Q, l, v = state.P, state.Q, state.l, state.v

    def vol(bus):
        return state.v0 if bus == 0 else v[bus - 1]

    for i in range(1, network.n_buses):
        k = i - 1
        out_p = sum(P[c - 1] for c in network.children[i])
        out_q = sum(Q[c - 1] for c in network.children[i])
        r, x = network.r[i], network.x[i]
        sigma = int(network.parent[i])
        res["active"] = max(res["active"], abs(-p[k] - (P[k] - r * l[k] - out_p)))
        res["reactive"] = max(res["reactive"], abs(-q[k] - (Q[k] - x * l[k] - out_q)))
        dv = vol(i) - vol(sigma) + 2 * (r * P[k] + x * Q[k]) - (r * r + x * x) * l[k]
        res["voltage"] = max(res["voltage"], abs(dv))
        res["current"] = max(res["current"], abs(l[k] - (P[k] ** 2 + Q[k] ** 2) / vol(sigma)))
    return res


def measure(v, std=0.0, rng=None) -> np.ndarray:
    """Add i.i.d. Gaussian noise of standard deviation ``std`` to ``v``."""
    v = np.asarray(v, dtype=float)
    if std < 0:
        raise ValueError("noise std must be non-negative")
    if std == 0:
        return v.copy()
    if rng is None:
        raise ValueError("a random generator is required when std > 0")
    return v + rng.normal(0.0, std, size=v.shape)
