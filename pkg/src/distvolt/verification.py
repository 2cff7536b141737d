"""Check a recorded run against the centralised oracle and the convergence bounds."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .oracle import (DualPoint, baseline_voltage, centralized_solve, compute_constants, dual_grad,
                     fd_dual_grad, kkt_residual, delayed_sums, zero_delay_sums, verify_descent)
from .simulation import LoadProfile, Scenario, Simulator

log = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    tolerance: float
    margin: float
    note: str = ""


@dataclass
class Report:
    checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def add(self, name, value, tolerance, note="", higher_is_better=False):
        """Record ``value <= tolerance`` (or ``>=`` when ``higher_is_better``)."""
        value = float(value)
        margin = value - tolerance if higher_is_better else tolerance - value
        ok = bool(margin >= 0) and not math.isnan(value)
        self.checks.append(Check(name, ok, value, float(tolerance), float(margin), note))
        return ok

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("check", "passed", "value", "tolerance", "margin", "note"))
        for c in self.checks:
            w.writerow((c.name, int(c.passed), format(c.value, ".17g"), format(c.tolerance, ".17g"),
                        format(c.margin, ".17g"), c.note))
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"warning: {w}" for w in self.warnings]
        width = max((len(c.name) for c in self.checks), default=0)
        for c in self.checks:
            lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  value={c.value:.3e}  "
                         f"tol={c.tolerance:.1e}  margin={c.margin:.3e}"
                         + (f"  ({c.note})" if c.note else ""))
        lines.append("all checks passed" if self.passed else f"failed: {', '.join(self.failed)}")
        return "\n".join(lines)

    @classmethod
    def from_csv(cls, text) -> "Report":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([Check(r["check"], r["passed"] == "1", float(r["value"]), float(r["tolerance"]),
                          float(r["margin"]), r["note"]) for r in rows])


def prepare(scenario: Scenario) -> tuple[Scenario, list]:
    """Verification setting: linear physics, exact measurements, first-tick load held fixed."""
    warnings = []
    changes = {}
    if scenario.physics != "linear":
        warnings.append("physics switched to linear for verification")
        changes["physics"] = "linear"
    if scenario.noise_std:
        warnings.append("measurement noise disabled for verification")
        changes["noise_std"] = 0.0
    if scenario.model_error is not None:
        warnings.append("model error disabled for verification")
        changes["model_error"] = None
    if not scenario.load.is_static:
        warnings.append("time-varying load replaced by its first tick")
        changes["load"] = LoadProfile.static(*scenario.load.at(0))
    return (scenario.replace(**changes) if changes else scenario), warnings


def verify(scenario: Scenario, z_tol=1e-12, kkt_tol=1e-6, tail_tol=1e-10, fd_tol=1e-5,
           fd_step=1e-6, slack=1e-12) -> Report:
    sc, warnings = prepare(scenario)
    report = Report(warnings=list(warnings))
    net = sc.network
    sens = net.sensitivity()
    tau = sc.delay.tau_max
    const = compute_constants(net, sc.costs, tau, sens)
    if sc.gamma > const.gamma_max:
        msg = (f"step size {sc.gamma:.4g} exceeds the sufficient bound {const.gamma_max:.4g}; "
               "checks still run")
        report.warnings.append(msg)
        log.warning(msg)
    for w in warnings:
        log.warning(w)

    sim = Simulator(sc, record_history=True)
    traj = sim.run()
    h = traj.history
    lo_hist, hi_hist = traj.lam_history()
    lam_hist = lo_hist - hi_hist
    base = baseline_voltage(sens, sc.v0, *sc.load.at(0))

    # Price-sum identities for the z accumulators.
    if sc.delay.kind == "none":
        zp, zq = zero_delay_sums(lam_hist, sens, net)
        err = max(np.max(np.abs(zp - h["z_p"])), np.max(np.abs(zq - h["z_q"])))
        report.add("z_delayed_sums", err, z_tol, "zero-delay structural lags")
    else:
        rep = delayed_sums(lam_hist, h["alpha_gen"], h["beta_gen"], sens, net, tau)
        err = max(np.max(np.abs(rep.z_p - h["z_p"])), np.max(np.abs(rep.z_q - h["z_q"])))
        report.add("z_delayed_sums", err, z_tol, "lags recovered from delivery record")
        report.add("z_lag_bound", rep.max_lag, rep.bound, "largest recovered price age")

    # Gradient-error and dual-increase inequalities.
    desc = verify_descent(lo_hist, hi_hist, traj.v, sc.gamma, const, sens, sc.costs, sc.limits, base,
                          atol=slack)
    # Both sides agree to rounding once the prices stop moving.
    report.add("gradient_error_bound", desc.gradient_margin, -slack, "min(bound - error) over ticks",
               higher_is_better=True)
    report.add("dual_increase_bound", desc.descent_margin, -slack, "min(lhs - rhs) over ticks",
               higher_is_better=True)
    report.add("price_step_tail", desc.tail_step, tail_tol, "||lam(T) - lam(T-1)||")

    # Optimality of the final state.
    dp = DualPoint(lo_hist[-1], hi_hist[-1])
    kkt = kkt_residual(sim.p, sim.q, dp, sens, sc.costs, sc.limits, base)
    report.add("kkt_final", kkt["max"], kkt_tol, "final injections and prices")
    sol = centralized_solve(sens, sc.costs, sc.limits, base)
    gap = max(np.max(np.abs(sim.p - sol.p)), np.max(np.abs(sim.q - sol.q)))
    report.add("oracle_agreement", gap, kkt_tol, "final injections vs centralised optimum")

    # Dual gradient against central differences at the final prices.
    g = dual_grad(dp, sens, sc.costs, sc.limits, base)
    fd = fd_dual_grad(dp, sens, sc.costs, sc.limits, base, fd_step)
    rel = np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-300)
    report.add("dual_gradient_fd", rel, fd_tol, "relative, central differences")
    return report
