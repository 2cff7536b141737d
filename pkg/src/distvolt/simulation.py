"""Discrete-time DIST-OPT simulator.

One tick is one control iteration. At tick ``t`` the engine

1. evaluates the physics at the current injections plus exogenous load,
2. adds measurement noise,
3. updates every bus's voltage prices,
4. builds upstream/downstream messages and hands them to the delay model,
5. delivers everything due this tick (newest generation wins),
6. refreshes the local ``z`` estimates, and
7. recomputes the injections for tick ``t + 1``.

Randomness (delays, noise, model error) comes from independent streams
spawned from one seed, so switching one source off leaves the others
unchanged.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .agent import Agent, CostParams, Limits, dual_update, local_control, local_control_general
from .network import RadialNetwork
from .powerflow import PhysicsDiverged, linear_voltage, measure, solve_branch_flow

log = logging.getLogger(__name__)

__all__ = ["DelayModel", "LoadProfile", "Scenario", "Simulator", "Trajectory", "run",
           "apply_model_error", "PhysicsDiverged", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DelayModel:
    """Per-message communication delay in ticks.

    ``kind`` is ``"none"``, ``"fixed"``, ``"uniform"`` (independent draws in
    ``[0, value]``) or ``"intermittent"`` (send only when the generation
    index is a multiple of ``value``, no delay).
    """

    kind: str = "none"
    value: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "fixed", "uniform", "intermittent"):
            raise ConfigError(f"unknown delay kind {self.kind!r}")
        if self.value < 0 or (self.kind == "intermittent" and self.value < 1):
            raise ConfigError(f"invalid delay parameter {self.value} for {self.kind}")

    @classmethod
    def none(cls):
        return cls("none", 0)

    @classmethod
    def fixed(cls, tau):
        return cls("fixed", int(tau))

    @classmethod
    def uniform(cls, tau_max):
        return cls("uniform", int(tau_max))

    @classmethod
    def intermittent(cls, period):
        return cls("intermittent", int(period))

    @property
    def tau_max(self) -> int:
        """Largest age of a held message relative to the freshest possible one."""
        if self.kind in ("fixed", "uniform"):
            return self.value
        if self.kind == "intermittent":
            return self.value - 1
        return 0

    @property
    def transit_max(self) -> int:
        return self.value if self.kind in ("fixed", "uniform") else 0

    def sends(self, gen_iter) -> bool:
        return self.kind != "intermittent" or gen_iter % self.value == 0

    def draw(self, rng, n) -> np.ndarray:
        if self.kind == "uniform":
            return rng.integers(0, self.value + 1, size=n)
        if self.kind == "fixed":
            return np.full(n, self.value, dtype=np.int64)
        return np.zeros(n, dtype=np.int64)

    def __str__(self):
        return self.kind if self.kind == "none" else f"{self.kind}:{self.value}"

    @classmethod
    def parse(cls, text) -> "DelayModel":
        text = text.strip().lower()
        if text in ("none", "0", ""):
            return cls.none()
        kind, _, val = text.partition(":")
        try:
            return cls(kind, int(val))
        except ValueError:
            raise ConfigError(f"cannot parse delay setting {text!r}") from None


class LoadProfile:
    """Exogenous net injections per tick (negative for consumption).

    Ticks past the end of the profile hold the last row, so a one-row
    profile describes a static load.
    """

    def __init__(self, p, q):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if p.shape != q.shape:
            raise ConfigError("active and reactive load tables differ in shape")
        self.p = p
        self.q = q

    @classmethod
    def static(cls, p, q):
        return cls(np.asarray(p, dtype=float)[None, :], np.asarray(q, dtype=float)[None, :])

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((1, n)), np.zeros((1, n)))

    @property
    def n_ticks(self) -> int:
        return self.p.shape[0]

    @property
    def n_bus(self) -> int:
        return self.p.shape[1]

    @property
    def is_static(self) -> bool:
        return self.n_ticks == 1 or bool(np.all(self.p == self.p[0]) and np.all(self.q == self.q[0]))

    def at(self, t):
        k = min(t, self.n_ticks - 1)
        return self.p[k], self.q[k]

    def __eq__(self, other):
        return (isinstance(other, LoadProfile) and np.array_equal(self.p, other.p)
                and np.array_equal(self.q, other.q))


@dataclass
class Scenario:
    network: RadialNetwork
    costs: CostParams
    limits: Limits
    gamma: float
    horizon: int
    v0: float = 1.0
    delay: DelayModel = field(default_factory=DelayModel.none)
    noise_std: float = 0.0
    model_error: tuple | None = None
    physics: str = "linear"
    load: LoadProfile | None = None
    seed: int = 0
    sweep_tol: float = 1e-10
    sweep_max_iter: int = 100

    def __post_init__(self):
        N = self.network.N
        if self.load is None:
            self.load = LoadProfile.zeros(N)
        if not self.gamma > 0:
            raise ConfigError("step size must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.physics not in ("linear", "nonlinear"):
            raise ConfigError(f"unknown physics mode {self.physics!r}")
        if self.noise_std < 0:
            raise ConfigError("noise std must be non-negative")
        if self.model_error is not None:
            lo, hi = self.model_error
            if not 0 < lo <= hi:
                raise ConfigError("model-error range must satisfy 0 < lo <= hi")
        if self.load.n_bus != N or self.costs.a_p.shape != (N,) or self.limits.p_lo.shape != (N,):
            raise ConfigError(f"per-bus tables must have {N} entries")

    def replace(self, **kw) -> "Scenario":
        return replace(self, **kw)


@dataclass
class Trajectory:
    """Per-tick record. Row ``t`` holds ``p(t), q(t)``, the true voltage they
    produce, and the prices computed from it (``lam(t+1)``)."""

    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    lam_lo: np.ndarray
    lam_hi: np.ndarray
    cost: np.ndarray
    msgs: np.ndarray
    wall: np.ndarray
    history: dict | None = None

    @property
    def horizon(self) -> int:
        return self.p.shape[0]

    @property
    def total_messages(self) -> int:
        return int(self.msgs.sum())

    def lam_history(self):
        """``(lam_lo, lam_hi)`` for time indices ``0 .. T``."""
        z = np.zeros((1, self.lam_lo.shape[1]))
        return np.vstack([z, self.lam_lo]), np.vstack([z, self.lam_hi])

    def vmag(self) -> np.ndarray:
        return np.sqrt(self.v)

    def violation(self, limits: Limits) -> np.ndarray:
        """Worst voltage-magnitude violation (p.u.) per tick."""
        vm = self.vmag()
        lo = np.sqrt(limits.v_lo)
        hi = np.sqrt(limits.v_hi)
        return np.max(np.maximum(0.0, np.maximum(lo - vm, vm - hi)), axis=1)

    def same_as(self, other) -> bool:
        keys = ("p", "q", "v", "lam_lo", "lam_hi", "cost", "msgs")
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in keys)


def apply_model_error(chi_r, chi_x, error_range, rng):
    """Scale each diagonal entry by an independent uniform factor in ``error_range``."""
    if error_range is None:
        return np.array(chi_r, dtype=float), np.array(chi_x, dtype=float)
    lo, hi = error_range
    if not 0 < lo <= hi:
        raise ConfigError("model-error range must satisfy 0 < lo <= hi")
    fr = rng.uniform(lo, hi, size=np.shape(chi_r))
    fx = rng.uniform(lo, hi, size=np.shape(chi_x))
    return chi_r * fr, chi_x * fx


class Simulator:
    """Runs a :class:`Scenario` tick by tick.

    ``backend="vector"`` updates every bus with array operations;
    ``backend="agents"`` steps individual :class:`~distvolt.agent.Agent`
    objects that exchange :class:`~distvolt.agent.Message` values. Both
    consume randomness identically.
    """

    def __init__(self, scenario: Scenario, record_history=False, backend="vector"):
        if backend not in ("vector", "agents"):
            raise ConfigError(f"unknown backend {backend!r}")
        self.sc = scenario
        self.backend = backend
        self.record_history = record_history
        net = scenario.network
        self.net = net
        self.N = N = net.N
        self.sens = net.sensitivity()
        seeds = np.random.SeedSequence(scenario.seed).spawn(3)
        self.rng_delay = np.random.default_rng(seeds[0])
        self.rng_noise = np.random.default_rng(seeds[1])
        self.rng_model = np.random.default_rng(seeds[2])
        self.chi_r, self.chi_x = apply_model_error(self.sens.chi_r, self.sens.chi_x,
                                                   scenario.model_error, self.rng_model)
        self.general = scenario.limits.s_bar is not None

        par = net.parent[1:]
        self.beta_links = np.flatnonzero(par != 0)  # child index of links with an agent parent
        self.beta_par = par[self.beta_links] - 1
        self.n_alpha = N
        self.n_beta = self.beta_links.size
        self.C = np.zeros((N, N))
        for c in self.beta_links:
            self.C[par[c] - 1, c] = 1.0
        S = np.zeros((N, N))
        for j in self.beta_links:
            for r in self.beta_links:
                if r != j and par[r] == par[j]:
                    S[j, r] = 1.0
        self.S = S[self.beta_links]

        self.t = 0
        self.z_p = np.zeros(N)
        self.z_q = np.zeros(N)
        self.lam_lo = np.zeros(N)
        self.lam_hi = np.zeros(N)
        self.alpha_hat = np.zeros(N)
        self.alpha_gen = np.zeros(N, dtype=np.int64)
        self.beta_p = np.zeros(N)
        self.beta_q = np.zeros(N)
        self.beta_gen = np.zeros(N, dtype=np.int64)
        B = scenario.delay.transit_max + 1
        self._B = B
        self._pa_val = np.zeros((B, N))
        self._pa_gen = np.full((B, N), -1, dtype=np.int64)
        self._pb_val = np.zeros((B, N, 2))
        self._pb_gen = np.full((B, N), -1, dtype=np.int64)

        if backend == "agents":
            self.agents = [None] + [
                Agent(i, int(net.parent[i]), net.children[i], self.chi_r[i - 1], self.chi_x[i - 1],
                      scenario.costs.row(i - 1), scenario.limits.row(i - 1))
                for i in range(1, N + 1)]
            self._pending = {}
        self.p, self.q = self._control(self.z_p, self.z_q)
        self.rows = []
        if record_history:
            self.hist = {"z_p": [self.z_p.copy()], "z_q": [self.z_q.copy()],
                         "alpha_gen": [self.alpha_gen.copy()], "beta_gen": [self.beta_gen.copy()],
                         "v_meas": []}

    # ------------------------------------------------------------------
    def _control(self, z_p, z_q):
        if self.general:
            return local_control_general(z_p, z_q, self.sc.costs, self.sc.limits)
        return local_control(z_p, z_q, self.sc.costs, self.sc.limits)

    def physics(self, p, q):
        sc = self.sc
        if sc.physics == "linear":
            return linear_voltage(self.sens, p, q, sc.v0)
        return solve_branch_flow(self.net, p, q, sc.v0, sc.sweep_tol, sc.sweep_max_iter).v

    def _update_z(self):
        base = self.lam_lo - self.lam_hi + self.C @ self.alpha_hat
        self.z_p = self.chi_r * base + self.beta_p
        self.z_q = self.chi_x * base + self.beta_q

    def tick(self):
        sc = self.sc
        t = self.t
        start = time.perf_counter()
        pl, ql = sc.load.at(t)
        if self.backend == "agents":
            self.p = np.array([a.state.p for a in self.agents[1:]])
            self.q = np.array([a.state.q for a in self.agents[1:]])
        p, q = self.p, self.q
        v = self.physics(p + pl, q + ql)
        v_meas = measure(v, sc.noise_std, self.rng_noise)
        gen = t + 1
        sending = sc.delay.sends(gen)
        if sending:
            taus = sc.delay.draw(self.rng_delay, self.n_alpha + self.n_beta)
            tau_a, tau_b = taus[:self.n_alpha], taus[self.n_alpha:]
        if self.backend == "vector":
            self._tick_vector(v_meas, gen, sending, tau_a if sending else None,
                              tau_b if sending else None)
        else:
            self._tick_agents(v_meas, gen, sending, tau_a if sending else None,
                              tau_b if sending else None)
        msgs = self.n_alpha + self.n_beta if sending else 0
        # p, q and the prices are rebound to fresh arrays every tick, so no copies
        self.rows.append((p, q, v, self.lam_lo, self.lam_hi, msgs, time.perf_counter() - start))
        if self.record_history:
            h = self.hist
            h["z_p"].append(self.z_p.copy())
            h["z_q"].append(self.z_q.copy())
            h["alpha_gen"].append(self.alpha_gen.copy())
            h["beta_gen"].append(self.beta_gen.copy())
            h["v_meas"].append(v_meas)
        self.t += 1

    def _tick_vector(self, v_meas, gen, sending, tau_a, tau_b):
        lim = self.sc.limits
        self.lam_lo, self.lam_hi, lam = dual_update(self.lam_lo, self.lam_hi, v_meas,
                                                    lim.v_lo, lim.v_hi, self.sc.gamma)
        if sending:
            alpha = lam + self.C @ self.alpha_hat
            bl, bp = self.beta_links, self.beta_par
            base = lam[bp] + self.S @ self.alpha_hat
            beta_p = self.chi_r[bp] * base + self.beta_p[bp]
            beta_q = self.chi_x[bp] * base + self.beta_q[bp]
            if self.sc.delay.transit_max == 0:
                self.alpha_hat = alpha
                self.alpha_gen[:] = gen
                self.beta_p = self.beta_p.copy()
                self.beta_q = self.beta_q.copy()
                self.beta_p[bl] = beta_p
                self.beta_q[bl] = beta_q
                self.beta_gen[bl] = gen
            else:
                B = self._B
                slot = (self.t + tau_a) % B
                cols = np.arange(self.N)
                self._pa_val[slot, cols] = alpha
                self._pa_gen[slot, cols] = gen
                slot = (self.t + tau_b) % B
                self._pb_val[slot, bl, 0] = beta_p
                self._pb_val[slot, bl, 1] = beta_q
                self._pb_gen[slot, bl] = gen
        if self.sc.delay.transit_max > 0:
            s = self.t % self._B
            fresh = self._pa_gen[s] > self.alpha_gen
            if np.any(fresh):
                self.alpha_hat = np.where(fresh, self._pa_val[s], self.alpha_hat)
                self.alpha_gen = np.where(fresh, self._pa_gen[s], self.alpha_gen)
            fresh = self._pb_gen[s] > self.beta_gen
            if np.any(fresh):
                self.beta_p = np.where(fresh, self._pb_val[s, :, 0], self.beta_p)
                self.beta_q = np.where(fresh, self._pb_val[s, :, 1], self.beta_q)
                self.beta_gen = np.where(fresh, self._pb_gen[s], self.beta_gen)
            self._pa_gen[s] = -1
            self._pb_gen[s] = -1
        self._update_z()
        self.p, self.q = self._control(self.z_p, self.z_q)

    def _tick_agents(self, v_meas, gen, sending, tau_a, tau_b):
        agents = self.agents[1:]
        for a in agents:
            a.price_step(v_meas[a.bus - 1], self.sc.gamma)
        if sending:
            beta_slot = {int(c) + 1: k for k, c in enumerate(self.beta_links)}
            for a in agents:
                for msg in a.outbox(gen):
                    if msg.kind == "alpha":
                        tau = int(tau_a[a.bus - 1])
                    else:
                        tau = int(tau_b[beta_slot[msg.receiver]])
                    self._pending.setdefault(self.t + tau, []).append(msg)
        for msg in self._pending.pop(self.t, []):
            if msg.receiver != 0:
                self.agents[msg.receiver].receive(msg)
        for a in agents:
            a.refresh_z()
            a.control()
        st = [a.state for a in agents]
        self.lam_lo = np.array([s.lam_lo for s in st])
        self.lam_hi = np.array([s.lam_hi for s in st])
        self.z_p = np.array([s.z_p for s in st])
        self.z_q = np.array([s.z_q for s in st])
        self.p = np.array([s.p for s in st])
        self.q = np.array([s.q for s in st])
        for a in agents:
            for c, g in a.state.alpha_gen.items():
                self.alpha_gen[c - 1] = g
            self.beta_gen[a.bus - 1] = a.state.beta_gen

    def run(self) -> Trajectory:
        remaining = self.sc.horizon - self.t
        for _ in range(remaining):
            self.tick()
        return self.trajectory()

    def trajectory(self) -> Trajectory:
        if not self.rows:
            raise ConfigError("no ticks have been run")
        cols = list(zip(*self.rows))
        hist = None
        if self.record_history:
            hist = {k: np.array(v) for k, v in self.hist.items()}
        p, q = np.array(cols[0]), np.array(cols[1])
        return Trajectory(p=p, q=q, v=np.array(cols[2]),
                          lam_lo=np.array(cols[3]), lam_hi=np.array(cols[4]),
                          cost=self.sc.costs.total(p, q), msgs=np.array(cols[5], dtype=np.int64),
                          wall=np.array(cols[6]), history=hist)


def run(scenario: Scenario, record_history=False, backend="vector") -> Trajectory:
    """Run ``scenario`` for its full horizon."""
    sim = Simulator(scenario, record_history=record_history, backend=backend)
    log.debug("running %d ticks on %r (delay %s, physics %s)", scenario.horizon,
              scenario.network, scenario.delay, scenario.physics)
    return sim.run()
