"""Synthetic feeders bundled with the package.

Both feeders are made up. They are sized and loaded so that the
uncontrolled network leaves the +/-5 % voltage band while the controlled
one can stay inside it with injections of at most 0.1 p.u. per bus. The
files under ``distvolt/data`` are produced by :func:`write_bundled_data`
and a test checks that they still match these generators.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .network import RadialNetwork, write_network

# (parent, child, r, x) in p.u.
FEEDER8_LINES = [
    (0, 1, 0.010, 0.020),
    (1, 2, 0.015, 0.025),
    (1, 3, 0.020, 0.030),
    (2, 4, 0.025, 0.020),
    (2, 5, 0.020, 0.015),
    (2, 6, 0.030, 0.025),
    (3, 7, 0.015, 0.030),
]
FEEDER8_P_LOAD = np.array([0.20, 0.15, 0.10, 0.25, 0.20, 0.15, 0.20])
FEEDER8_Q_LOAD = 0.5 * FEEDER8_P_LOAD
FEEDER8_A = np.array([1.0, 1.2, 1.5, 1.8, 2.0, 1.4, 1.6])

FEEDER32_SEED = 20160517
PROFILE32_TICKS = 720


def feeder8() -> RadialNetwork:
    return RadialNetwork(FEEDER8_LINES)


def _feeder32_lines():
    rng = np.random.default_rng(FEEDER32_SEED)
    # Trunk 0-1-...-12, laterals hanging off trunk buses.
    lines = [(k - 1, k) for k in range(1, 13)]
    laterals = {3: 4, 6: 5, 8: 4, 10: 3, 12: 3}
    nxt = 13
    for root, length in laterals.items():
        prev = root
        for _ in range(length):
            lines.append((prev, nxt))
            prev = nxt
            nxt += 1
    out = []
    for a, b in lines:
        trunk = b <= 12
        r = rng.uniform(0.004, 0.008) if trunk else rng.uniform(0.006, 0.012)
        x = r * rng.uniform(0.8, 1.6)
        out.append((a, b, round(r, 5), round(x, 5)))
    return out


def feeder32() -> RadialNetwork:
    return RadialNetwork(_feeder32_lines())


def pv_day_profile(network: RadialNetwork, n_ticks=PROFILE32_TICKS, seed=FEEDER32_SEED):
    """Net exogenous injections for a compressed day with rooftop PV.

    Consumption follows a two-peak shape with small per-bus jitter;
    roughly half the buses carry PV following a clipped sine around
    midday with slow cloud dips. Returns ``(p, q)`` arrays of shape
    ``(n_ticks, N)``, negative for net consumption.
    """
    rng = np.random.default_rng(seed + 1)
    N = network.N
    h = np.linspace(0.0, 24.0, n_ticks, endpoint=False)
    shape = (0.45 + 0.25 * np.exp(-0.5 * ((h - 8.0) / 1.5) ** 2)
             + 0.55 * np.exp(-0.5 * ((h - 19.5) / 2.0) ** 2))
    base = rng.uniform(0.025, 0.045, size=N)
    jitter = 1.0 + 0.03 * rng.standard_normal((n_ticks, N))
    load_p = -shape[:, None] * base[None, :] * jitter
    load_q = 0.4 * load_p
    sun = np.clip(np.sin(np.pi * (h - 6.0) / 13.0), 0.0, None)
    cloud = 1.0 - 0.25 * np.clip(np.sin(2 * np.pi * h / 3.3) * np.sin(2 * np.pi * h / 7.1), 0, None)
    has_pv = rng.random(N) < 0.55
    cap = np.where(has_pv, rng.uniform(0.15, 0.22, size=N), 0.0)
    pv = (sun * cloud)[:, None] * cap[None, :]
    return np.round(load_p + pv, 6), np.round(load_q, 6)


def data_path(name) -> Path:
    return Path(str(resources.files("distvolt") / "data" / name))


def write_profile(path, p, q):
    """Write a load table as ``t,bus,p_load,q_load`` rows (buses numbered from 1)."""
    rows = ["t,bus,p_load,q_load"]
    for t in range(p.shape[0]):
        for k in range(p.shape[1]):
            rows.append(f"{t},{k + 1},{float(p[t, k])!r},{float(q[t, k])!r}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def write_bundled_data(directory):
    """Regenerate the network and profile files for both feeders."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_network(feeder8(), directory / "feeder8.csv",
                  header="Synthetic 8-bus radial feeder (bus 0 = substation). Not real data.")
    write_profile(directory / "feeder8_load.csv", -FEEDER8_P_LOAD[None, :], -FEEDER8_Q_LOAD[None, :])
    net = feeder32()
    write_network(net, directory / "feeder32.csv",
                  header=f"Synthetic 32-bus radial feeder, generated with seed {FEEDER32_SEED}. "
                         "Not real data.")
    p, q = pv_day_profile(net)
    write_profile(directory / "feeder32_pvday.csv", p, q)
