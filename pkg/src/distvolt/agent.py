"""Per-bus DIST-OPT controller: local control law, dual prices and messages.

The control and price updates are written with numpy broadcasting, so the
same functions serve a single bus (scalars) and the whole feeder (arrays).
The message builders take the per-neighbour maps an individual agent
holds; the simulator has matrix-form equivalents for speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np


class InfeasibleLocalSet(ValueError):
    """The power box and the apparent-power disk do not intersect."""


@dataclass(frozen=True)
class CostParams:
    """Quadratic costs ``a/2 u^2 + b u + c`` for active and reactive power."""

    a_p: np.ndarray
    b_p: np.ndarray
    c_p: np.ndarray
    a_q: np.ndarray
    b_q: np.ndarray
    c_q: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, np.asarray(getattr(self, f.name), dtype=float))
        if np.any(self.a_p <= 0) or np.any(self.a_q <= 0):
            raise ValueError("quadratic cost coefficients must be strictly positive")

    @classmethod
    def uniform(cls, n, a_p=1.0, a_q=1.0, b_p=0.0, b_q=0.0, c_p=0.0, c_q=0.0):
        full = lambda v: np.full(n, float(v))  # noqa: E731
        return cls(full(a_p), full(b_p), full(c_p), full(a_q), full(b_q), full(c_q))

    @property
    def a_min(self) -> float:
        return float(min(self.a_p.min(), self.a_q.min()))

    def row(self, k) -> "CostParams":
        return CostParams(*(getattr(self, f.name)[k] for f in fields(self)))

    def total(self, p, q):
        """Summed cost; rows of 2-d ``p``, ``q`` are summed separately."""
        cp = 0.5 * self.a_p * p * p + self.b_p * p + self.c_p
        cq = 0.5 * self.a_q * q * q + self.b_q * q + self.c_q
        tot = np.sum(cp + cq, axis=-1)
        return float(tot) if np.ndim(tot) == 0 else tot


@dataclass(frozen=True)
class Limits:
    """Injection boxes (p.u.), squared-voltage bounds (p.u.^2), optional disk cap."""

    p_lo: np.ndarray
    p_hi: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray
    s_bar: np.ndarray | None = None

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if val is not None:
                object.__setattr__(self, f.name, np.asarray(val, dtype=float))
        if np.any(self.p_lo > self.p_hi) or np.any(self.q_lo > self.q_hi):
            raise ValueError("power box has lower bound above upper bound")
        if np.any(self.v_lo >= self.v_hi):
            raise ValueError("voltage bounds must satisfy v_lo < v_hi")
        if self.s_bar is not None and np.any(self.s_bar <= 0):
            raise ValueError("apparent-power cap must be positive")

    @classmethod
    def from_magnitudes(cls, n, p=0.1, q=0.1, v_min=0.95, v_max=1.05, s_bar=None):
        """Symmetric boxes ``[-p, p]``, ``[-q, q]`` and squared magnitude limits."""
        full = lambda v: np.full(n, float(v))  # noqa: E731
        return cls(full(-p), full(p), full(-q), full(q), full(v_min ** 2), full(v_max ** 2),
                   None if s_bar is None else full(s_bar))

    def row(self, k) -> "Limits":
        vals = {f.name: (None if getattr(self, f.name) is None else getattr(self, f.name)[k])
                for f in fields(self)}
        return Limits(**vals)

    def with_s_bar(self, s_bar) -> "Limits":
        return replace(self, s_bar=None if s_bar is None else np.broadcast_to(
            np.asarray(s_bar, dtype=float), self.p_lo.shape).copy())


# ----------------------------------------------------------------------
# Local control


def local_control(z_p, z_q, cost: CostParams, limits: Limits):
    """Box-clamped response ``clamp((z - b) / a)`` for active and reactive power."""
    # minimum/maximum rather than np.clip: same result, far less overhead on short vectors
    p = np.minimum(np.maximum((z_p - cost.b_p) / cost.a_p, limits.p_lo), limits.p_hi)
    q = np.minimum(np.maximum((z_q - cost.b_q) / cost.a_q, limits.q_lo), limits.q_hi)
    return p, q


def local_control_general(z_p, z_q, cost: CostParams, limits: Limits, tol=1e-10, max_bisect=200):
    """Minimise ``C_p(p) + C_q(q) - z_p p - z_q q`` over the box and ``p^2 + q^2 <= s_bar^2``.

    With a multiplier ``mu`` on the disk the problem separates into two
    box-clamped scalar responses ``clamp((z - b) / (a + 2 mu))`` whose norm
    decreases with ``mu``. The multiplier is bracketed by doubling and
    then bisected; the returned point is always on the feasible side.
    """
    if limits.s_bar is None:
        return local_control(z_p, z_q, cost, limits)
    shape = np.broadcast(np.asarray(z_p), np.asarray(z_q), cost.a_p, limits.s_bar).shape
    zp = np.broadcast_to(np.asarray(z_p, dtype=float), shape)
    zq = np.broadcast_to(np.asarray(z_q, dtype=float), shape)
    ap, bp, aq, bq, plo, phi, qlo, qhi, s = (
        np.broadcast_to(a, shape) for a in (cost.a_p, cost.b_p, cost.a_q, cost.b_q, limits.p_lo,
                                            limits.p_hi, limits.q_lo, limits.q_hi, limits.s_bar))
    s2 = s * s

    def point(mu):
        return (np.clip((zp - bp) / (ap + 2.0 * mu), plo, phi),
                np.clip((zq - bq) / (aq + 2.0 * mu), qlo, qhi))

    p, q = point(np.zeros(shape))
    over = p * p + q * q > s2
    if not np.any(over):
        return _unwrap(p, q, np.ndim(z_p) == 0 and np.ndim(z_q) == 0 and shape == ())

    p_far = np.clip(0.0, plo, phi)
    q_far = np.clip(0.0, qlo, qhi)
    if np.any((p_far * p_far + q_far * q_far - s2 > tol) & over):
        k = np.flatnonzero(((p_far * p_far + q_far * q_far - s2) > tol) & over)
        raise InfeasibleLocalSet(f"box and disk do not intersect at index {k.tolist()}")

    idx = np.flatnonzero(over.ravel())
    sub = lambda a: a.ravel()[idx]  # noqa: E731
    zp_, zq_, ap_, bp_, aq_, bq_ = map(sub, (zp, zq, ap, bp, aq, bq))
    plo_, phi_, qlo_, qhi_, s2_ = map(sub, (plo, phi, qlo, qhi, s2))

    def pt(mu):
        return (np.clip((zp_ - bp_) / (ap_ + 2.0 * mu), plo_, phi_),
                np.clip((zq_ - bq_) / (aq_ + 2.0 * mu), qlo_, qhi_))

    def excess(mu):
        a, b = pt(mu)
        return a * a + b * b - s2_

    # Each element follows its own bracket-and-bisect sequence, so the
    # result does not depend on which other buses are solved alongside.
    lo = np.zeros(idx.size)
    hi = np.ones(idx.size)
    for _ in range(1100):
        bad = excess(hi) > 0
        if not np.any(bad):
            break
        lo = np.where(bad, hi, lo)
        hi = np.where(bad, hi * 2.0, hi)
    active = np.abs(excess(hi)) > tol
    for _ in range(max_bisect):
        if not np.any(active):
            break
        mid = 0.5 * (lo + hi)
        ex = excess(mid)
        take = active & (ex <= 0)
        hi = np.where(take, mid, hi)
        lo = np.where(active & ~take, mid, lo)
        active = active & (np.abs(excess(hi)) > tol)
    ps, qs = pt(hi)
    p = np.array(p, dtype=float).reshape(-1)
    q = np.array(q, dtype=float).reshape(-1)
    p[idx] = ps
    q[idx] = qs
    p = p.reshape(shape)
    q = q.reshape(shape)
    return _unwrap(p, q, np.ndim(z_p) == 0 and np.ndim(z_q) == 0 and shape == ())


def _unwrap(p, q, scalar):
    if scalar:
        return float(p), float(q)
    return p, q


# ----------------------------------------------------------------------
# Prices and messages


def dual_update(lam_lo, lam_hi, v_meas, v_lo, v_hi, gamma):
    """Projected price step from one voltage measurement.

    Returns ``(lam_lo', lam_hi', lam_lo' - lam_hi')``.
    """
    lo = np.maximum(0.0, lam_lo + gamma * (v_lo - v_meas))
    hi = np.maximum(0.0, lam_hi + gamma * (v_meas - v_hi))
    return lo, hi, lo - hi


def make_alpha(lam, alpha_in) -> float:
    """Upstream message: own price plus the latest aggregate from every child."""
    return lam + sum(alpha_in.values())


def make_beta(lam, target, alpha_in, beta_in, chi_r, chi_x):
    """Downstream message for child ``target``; that child's own aggregate is left out."""
    siblings = sum(a for c, a in alpha_in.items() if c != target)
    base = lam + siblings
    return chi_r * base + beta_in[0], chi_x * base + beta_in[1]


def update_z(lam, alpha_in, beta_in, chi_r, chi_x):
    """Local estimates of ``(R lam)_i`` and ``(X lam)_i``."""
    base = lam + sum(alpha_in.values())
    return chi_r * base + beta_in[0], chi_x * base + beta_in[1]


@dataclass(frozen=True)
class Message:
    kind: str  # "alpha" (child -> parent) or "beta" (parent -> child)
    sender: int
    receiver: int
    payload: object
    gen_iter: int


@dataclass
class AgentState:
    z_p: float = 0.0
    z_q: float = 0.0
    lam_lo: float = 0.0
    lam_hi: float = 0.0
    alpha_in: dict = field(default_factory=dict)
    alpha_gen: dict = field(default_factory=dict)
    beta_in: tuple = (0.0, 0.0)
    beta_gen: int = 0
    p: float = 0.0
    q: float = 0.0

    @property
    def lam(self) -> float:
        return self.lam_lo - self.lam_hi


class Agent:
    """One bus running DIST-OPT, talking only to its parent and children.

    ``parent`` is ``0`` for buses fed directly by the substation. Those
    buses still report upward but never receive a downstream message, so
    their ``beta_in`` stays zero.
    """

    def __init__(self, bus, parent, children, chi_r, chi_x, cost: CostParams, limits: Limits):
        self.bus = bus
        self.parent = parent
        self.children = tuple(children)
        self.chi_r = float(chi_r)
        self.chi_x = float(chi_x)
        self.cost = cost
        self.limits = limits
        self.state = AgentState(alpha_in={c: 0.0 for c in self.children},
                                alpha_gen={c: 0 for c in self.children})
        self.control()

    def control(self):
        s = self.state
        if self.limits.s_bar is None:
            s.p, s.q = (float(u) for u in local_control(s.z_p, s.z_q, self.cost, self.limits))
        else:
            s.p, s.q = local_control_general(s.z_p, s.z_q, self.cost, self.limits)
        return s.p, s.q

    def price_step(self, v_meas, gamma):
        s = self.state
        lo, hi, _ = dual_update(s.lam_lo, s.lam_hi, v_meas, self.limits.v_lo, self.limits.v_hi, gamma)
        s.lam_lo, s.lam_hi = float(lo), float(hi)

    def outbox(self, gen_iter) -> list[Message]:
        s = self.state
        out = [Message("alpha", self.bus, self.parent, make_alpha(s.lam, s.alpha_in), gen_iter)]
        for c in self.children:
            beta = make_beta(s.lam, c, s.alpha_in, s.beta_in, self.chi_r, self.chi_x)
            out.append(Message("beta", self.bus, c, beta, gen_iter))
        return out

    def receive(self, msg: Message):
        """Keep the newest message per neighbour; stale arrivals are dropped."""
        s = self.state
        if msg.kind == "alpha":
            if msg.gen_iter > s.alpha_gen[msg.sender]:
                s.alpha_in[msg.sender] = msg.payload
                s.alpha_gen[msg.sender] = msg.gen_iter
        elif msg.gen_iter > s.beta_gen:
            s.beta_in = msg.payload
            s.beta_gen = msg.gen_iter

    def refresh_z(self):
        s = self.state
        s.z_p, s.z_q = update_z(s.lam, s.alpha_in, s.beta_in, self.chi_r, self.chi_x)
