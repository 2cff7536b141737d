"""Scenario, load-profile and result files.

A scenario file is INI-style text with two sections::

    [scenario]
    network = feeder8.csv        # relative to the scenario file
    profile = feeder8_load.csv   # optional; omitted means no exogenous load
    gamma = auto                 # or a number; auto = 0.9 x the safe bound
    horizon = 5000
    delay = none                 # none | fixed:5 | uniform:15 | intermittent:5
    noise_std = 0
    model_error = none           # or "0.8, 1.2"
    physics = linear             # or nonlinear
    v_source = 1.0               # substation voltage magnitude, p.u.
    v_min = 0.95
    v_max = 1.05
    seed = 0

    [bus_params]
    #        a_p b_p c_p a_q b_q c_q p_min p_max q_min q_max s_max
    default = 1 0 0 1 0 0 -0.1 0.1 -0.1 0.1 none
    3       = 2 0 0 2 0 0 -0.1 0.1 -0.1 0.1 0.12

Voltage limits are magnitudes and are squared before they reach the
controller. Output CSVs use ``.`` decimals, ``\\n`` line endings and
17 significant digits so every double survives a round trip.
"""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import CostParams, Limits
from .network import NetworkError, RadialNetwork, read_network
from .simulation import ConfigError, DelayModel, LoadProfile, Scenario, Trajectory

BUS_FIELDS = ("a_p", "b_p", "c_p", "a_q", "b_q", "c_q", "p_min", "p_max", "q_min", "q_max", "s_max")
TRAJECTORY_HEADER = ("t", "bus", "p", "q", "v", "lam_lo", "lam_hi", "cost", "msgs")
FEASIBILITY_TOL = 1e-3


def fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class BusRow:
    a_p: float = 1.0
    b_p: float = 0.0
    c_p: float = 0.0
    a_q: float = 1.0
    b_q: float = 0.0
    c_q: float = 0.0
    p_min: float = -0.1
    p_max: float = 0.1
    q_min: float = -0.1
    q_max: float = 0.1
    s_max: float | None = None

    @classmethod
    def parse(cls, text, where="") -> "BusRow":
        parts = text.split()
        if len(parts) != len(BUS_FIELDS):
            raise ConfigError(f"{where}: expected {len(BUS_FIELDS)} fields "
                              f"({' '.join(BUS_FIELDS)}), got {len(parts)}")
        try:
            vals = [float(p) for p in parts[:-1]]
            s = None if parts[-1].lower() == "none" else float(parts[-1])
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        return cls(*vals, s)

    def dumps(self) -> str:
        vals = [getattr(self, f) for f in BUS_FIELDS]
        return " ".join("none" if v is None else repr(float(v)) for v in vals)


@dataclass
class ScenarioFile:
    """Typed contents of a scenario file, before any referenced file is read."""

    network: str
    horizon: int
    gamma: float | str = "auto"
    profile: str | None = None
    delay: DelayModel = field(default_factory=DelayModel.none)
    noise_std: float = 0.0
    model_error: tuple | None = None
    physics: str = "linear"
    v_source: float = 1.0
    v_min: float = 0.95
    v_max: float = 1.05
    seed: int = 0
    bus_default: BusRow = field(default_factory=BusRow)
    bus_rows: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), compare=False)

    # -- resolution ------------------------------------------------------
    def path(self, name) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    def load_network(self) -> RadialNetwork:
        path = self.path(self.network)
        if not path.is_file():
            raise ConfigError(f"network file not found: {path}")
        try:
            return read_network(path)
        except (NetworkError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def tables(self, N):
        for b in self.bus_rows:
            if not 1 <= b <= N:
                raise ConfigError(f"bus_params row for bus {b} but the feeder has buses 1..{N}")
        rows = [self.bus_rows.get(k, self.bus_default) for k in range(1, N + 1)]
        col = lambda f: np.array([getattr(r, f) for r in rows], dtype=float)  # noqa: E731
        s = [r.s_max for r in rows]
        if any(v is None for v in s) and not all(v is None for v in s):
            raise ConfigError("s_max must be set for every bus or for none")
        try:
            costs = CostParams(col("a_p"), col("b_p"), col("c_p"), col("a_q"), col("b_q"), col("c_q"))
            limits = Limits(col("p_min"), col("p_max"), col("q_min"), col("q_max"),
                            np.full(N, self.v_min ** 2), np.full(N, self.v_max ** 2),
                            None if s[0] is None else np.array(s, dtype=float))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return costs, limits

    def build(self) -> Scenario:
        net = self.load_network()
        costs, limits = self.tables(net.N)
        load = None
        if self.profile is not None:
            load = read_profile(self.path(self.profile), net.N)
        if self.gamma == "auto":
            from .oracle import compute_constants
            gamma = compute_constants(net, costs, self.delay.tau_max).gamma_default
        else:
            gamma = float(self.gamma)
        return Scenario(network=net, costs=costs, limits=limits, gamma=gamma, horizon=self.horizon,
                        v0=self.v_source ** 2, delay=self.delay, noise_std=self.noise_std,
                        model_error=self.model_error, physics=self.physics, load=load,
                        seed=self.seed)

    # -- text form ---------------------------------------------------------
    def dumps(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        me = "none" if self.model_error is None else f"{self.model_error[0]!r}, {self.model_error[1]!r}"
        cp["scenario"] = {
            "network": self.network,
            "profile": "none" if self.profile is None else self.profile,
            "gamma": self.gamma if self.gamma == "auto" else repr(float(self.gamma)),
            "horizon": str(self.horizon),
            "delay": str(self.delay),
            "noise_std": repr(float(self.noise_std)),
            "model_error": me,
            "physics": self.physics,
            "v_source": repr(float(self.v_source)),
            "v_min": repr(float(self.v_min)),
            "v_max": repr(float(self.v_max)),
            "seed": str(self.seed),
        }
        rows = {"default": self.bus_default.dumps()}
        rows.update({str(k): r.dumps() for k, r in sorted(self.bus_rows.items())})
        cp["bus_params"] = rows
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _num(sec, key, default, kind=float):
    raw = sec.get(key)
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[scenario] {key} = {raw!r} is not a valid {kind.__name__}") from None


def parse_scenario(text, base_dir=".") -> ScenarioFile:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from None
    if "scenario" not in cp:
        raise ConfigError("missing [scenario] section")
    sec = cp["scenario"]
    known = {"network", "profile", "gamma", "horizon", "delay", "noise_std", "model_error",
             "physics", "v_source", "v_min", "v_max", "seed"}
    unknown = set(sec) - known
    if unknown:
        raise ConfigError(f"unknown [scenario] keys: {sorted(unknown)}")
    if "network" not in sec or "horizon" not in sec:
        raise ConfigError("[scenario] needs at least 'network' and 'horizon'")
    gamma = sec.get("gamma", "auto").strip().lower()
    if gamma != "auto":
        gamma = _num(sec, "gamma", None)
    profile = sec.get("profile", "none").strip()
    me_raw = sec.get("model_error", "none").strip().lower()
    if me_raw == "none":
        model_error = None
    else:
        try:
            lo, hi = (float(v) for v in me_raw.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"model_error must be 'none' or two numbers, got {me_raw!r}") from None
        model_error = (lo, hi)
    physics = sec.get("physics", "linear").strip().lower()
    if physics not in ("linear", "nonlinear"):
        raise ConfigError(f"physics must be linear or nonlinear, got {physics!r}")

    bus_default = BusRow()
    bus_rows = {}
    if "bus_params" in cp:
        for key, val in cp["bus_params"].items():
            where = f"[bus_params] {key}"
            if key == "default":
                bus_default = BusRow.parse(val, where)
            else:
                try:
                    bus_rows[int(key)] = BusRow.parse(val, where)
                except ValueError:
                    raise ConfigError(f"{where}: bus id must be an integer") from None
    sf = ScenarioFile(
        network=sec["network"].strip(),
        horizon=_num(sec, "horizon", 1, int),
        gamma=gamma,
        profile=None if profile.lower() == "none" else profile,
        delay=DelayModel.parse(sec.get("delay", "none")),
        noise_std=_num(sec, "noise_std", 0.0),
        model_error=model_error,
        physics=physics,
        v_source=_num(sec, "v_source", 1.0),
        v_min=_num(sec, "v_min", 0.95),
        v_max=_num(sec, "v_max", 1.05),
        seed=_num(sec, "seed", 0, int),
        bus_default=bus_default,
        bus_rows=bus_rows,
        base_dir=Path(base_dir),
    )
    if sf.horizon < 1:
        raise ConfigError("horizon must be at least 1")
    if not 0 < sf.v_min < sf.v_max:
        raise ConfigError("voltage limits must satisfy 0 < v_min < v_max")
    if sf.gamma != "auto" and not sf.gamma > 0:
        raise ConfigError("gamma must be positive")
    return sf


def read_scenario(path) -> ScenarioFile:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    return parse_scenario(path.read_text(encoding="utf-8"), path.parent)


def load_scenario(path) -> Scenario:
    return read_scenario(path).build()


# ----------------------------------------------------------------------
# Load profiles


def read_profile(path, n_bus) -> LoadProfile:
    """Read ``t,bus,p_load,q_load`` rows; (tick, bus) pairs not listed are zero."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"load profile not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if row.strip() and not row.startswith("#"))
        header = [h.strip() for h in next(reader, [])]
        if header != ["t", "bus", "p_load", "q_load"]:
            raise ConfigError(f"{path}: header must be t,bus,p_load,q_load")
        recs = []
        for lineno, row in enumerate(reader, 2):
            try:
                t, b, p, q = int(row[0]), int(row[1]), float(row[2]), float(row[3])
            except (ValueError, IndexError):
                raise ConfigError(f"{path}:{lineno}: bad row {row!r}") from None
            if t < 0 or not 1 <= b <= n_bus:
                raise ConfigError(f"{path}:{lineno}: tick or bus out of range")
            recs.append((t, b, p, q))
    if not recs:
        return LoadProfile.zeros(n_bus)
    T = max(r[0] for r in recs) + 1
    P = np.zeros((T, n_bus))
    Q = np.zeros((T, n_bus))
    for t, b, p, q in recs:
        P[t, b - 1] = p
        Q[t, b - 1] = q
    return LoadProfile(P, Q)


# ----------------------------------------------------------------------
# Results


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_trajectory(traj: Trajectory, path):
    """Long-form trajectory: one row per (tick, bus)."""
    T, N = traj.p.shape

    def rows():
        for t in range(T):
            cost = fmt(traj.cost[t])
            msgs = str(int(traj.msgs[t]))
            for k in range(N):
                yield (t, k + 1, fmt(traj.p[t, k]), fmt(traj.q[t, k]), fmt(traj.v[t, k]),
                       fmt(traj.lam_lo[t, k]), fmt(traj.lam_hi[t, k]), cost, msgs)

    _write_rows(path, TRAJECTORY_HEADER, rows())


def read_trajectory(path) -> dict:
    """Read a trajectory CSV back into ``(T, N)`` arrays keyed by column name."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        data = list(csv.DictReader(fh))
    T = max(int(r["t"]) for r in data) + 1
    N = max(int(r["bus"]) for r in data)
    out = {k: np.zeros((T, N)) for k in ("p", "q", "v", "lam_lo", "lam_hi")}
    out["cost"] = np.zeros(T)
    out["msgs"] = np.zeros(T, dtype=int)
    for r in data:
        t, k = int(r["t"]), int(r["bus"]) - 1
        for key in ("p", "q", "v", "lam_lo", "lam_hi"):
            out[key][t, k] = float(r[key])
        out["cost"][t] = float(r["cost"])
        out["msgs"][t] = int(r["msgs"])
    return out


def write_timeseries(traj: Trajectory, out_dir):
    """Wide per-bus tables (one column per bus) for plotting."""
    out_dir = Path(out_dir)
    N = traj.p.shape[1]
    header = ["t"] + [f"bus{k}" for k in range(1, N + 1)]
    for name, arr in (("p", traj.p), ("q", traj.q), ("vmag", traj.vmag())):
        _write_rows(out_dir / f"timeseries_{name}.csv", header,
                    ([t] + [fmt(x) for x in row] for t, row in enumerate(arr)))


def iterations_to_feasibility(traj: Trajectory, limits: Limits, tol=FEASIBILITY_TOL) -> int:
    """First tick from which the voltage magnitude stays within limits (+tol); -1 if never."""
    bad = np.flatnonzero(traj.violation(limits) > tol)
    if bad.size == 0:
        return 0
    last = int(bad[-1])
    return last + 1 if last + 1 < traj.horizon else -1


def summarize(traj: Trajectory, scenario: Scenario) -> dict:
    vm = traj.vmag()
    viol = traj.violation(scenario.limits)
    return {
        "horizon": traj.horizon,
        "final_cost": float(traj.cost[-1]),
        "vmag_min": float(vm.min()),
        "vmag_max": float(vm.max()),
        "final_max_violation": float(viol[-1]),
        "in_band_fraction": float(np.mean(viol <= 0.0)),
        "total_messages": traj.total_messages,
        "iterations_to_feasibility": iterations_to_feasibility(traj, scenario.limits),
        "max_abs_p": float(np.abs(traj.p).max()),
        "max_abs_q": float(np.abs(traj.q).max()),
        "gamma": float(scenario.gamma),
    }


def write_summary(summary: dict, path):
    rows = ((k, fmt(v) if isinstance(v, float) else str(v)) for k, v in summary.items())
    _write_rows(path, ("key", "value"), rows)


def read_summary(path) -> dict:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r)
        return {k: v for k, v in r}


def write_outputs(traj: Trajectory, scenario: Scenario, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory(traj, out_dir / "trajectory.csv")
    summary = summarize(traj, scenario)
    write_summary(summary, out_dir / "summary.csv")
    write_timeseries(traj, out_dir)
    return summary
