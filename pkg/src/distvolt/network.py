"""Radial network topology and linear DistFlow sensitivity matrices.

Buses are integers ``0..N`` with the substation at ``0``. Every non-root
bus ``k`` is fed by exactly one line, so lines are indexed by their child
bus. Sensitivity matrices are dense ``N x N`` arrays over the non-root
buses: row/column ``k - 1`` belongs to bus ``k``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class NetworkError(ValueError):
    """Base class for topology and line-data errors."""


class CycleDetected(NetworkError):
    def __init__(self, line):
        self.line = line
        super().__init__(f"line {line[0]}-{line[1]} closes a cycle")


class DisconnectedBus(NetworkError):
    def __init__(self, bus):
        self.bus = bus
        super().__init__(f"bus {bus} is not connected to the substation")


class DuplicateLine(NetworkError):
    def __init__(self, line):
        self.line = line
        super().__init__(f"line {line[0]}-{line[1]} appears more than once")


class BadRoot(NetworkError):
    def __init__(self, message="substation bus 0 is missing"):
        super().__init__(message)


class BadImpedance(NetworkError):
    def __init__(self, line, r, x):
        self.line = line
        super().__init__(f"line {line[0]}-{line[1]} has non-positive impedance r={r}, x={x}")


class UnknownBus(NetworkError, KeyError):
    def __init__(self, bus):
        self.bus = bus
        ValueError.__init__(self, f"unknown bus {bus}")

    def __str__(self):
        return f"unknown bus {self.bus}"


@dataclass(frozen=True)
class Line:
    """A line oriented from parent bus to child bus. Impedances in p.u."""

    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True)
class SensitivityMatrices:
    R: np.ndarray
    X: np.ndarray

    @property
    def chi_r(self) -> np.ndarray:
        return np.diag(self.R).copy()

    @property
    def chi_x(self) -> np.ndarray:
        return np.diag(self.X).copy()

    @property
    def n(self) -> int:
        return self.R.shape[0]


def validate(lines, n_buses=None) -> np.ndarray:
    """Check that ``lines`` form a spanning tree rooted at bus 0.

    ``lines`` is an iterable of ``(a, b, r, x)`` tuples or :class:`Line`
    objects; endpoint order does not matter. Returns the parent array
    (``parent[0] == -1``). Raises a :class:`NetworkError` subclass naming
    the offending bus or line.
    """
    records = [_as_tuple(ln) for ln in lines]
    ids = {a for a, _, _, _ in records} | {b for _, b, _, _ in records}
    if any(i < 0 for i in ids):
        raise BadRoot(f"negative bus id {min(ids)}")
    if n_buses is None:
        n_buses = max(ids) + 1 if ids else 1
    if 0 not in ids and n_buses > 1:
        raise BadRoot()
    if ids and max(ids) >= n_buses:
        raise UnknownBus(max(ids))

    seen = set()
    uf = list(range(n_buses))

    def find(a):
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    adj = [[] for _ in range(n_buses)]
    for a, b, r, x in records:
        key = (min(a, b), max(a, b))
        if a == b:
            raise CycleDetected((a, b))
        if key in seen:
            raise DuplicateLine((a, b))
        seen.add(key)
        if not (r > 0 and x > 0):
            raise BadImpedance((a, b), r, x)
        ra, rb = find(a), find(b)
        if ra == rb:
            raise CycleDetected((a, b))
        uf[ra] = rb
        adj[a].append(b)
        adj[b].append(a)

    parent = np.full(n_buses, -2, dtype=int)
    parent[0] = -1
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if parent[w] == -2:
                parent[w] = u
                queue.append(w)
    orphans = np.flatnonzero(parent == -2)
    if orphans.size:
        raise DisconnectedBus(int(orphans[0]))
    return parent


def _as_tuple(ln):
    if isinstance(ln, Line):
        return ln.from_bus, ln.to_bus, float(ln.r), float(ln.x)
    a, b, r, x = ln
    return int(a), int(b), float(r), float(x)


class RadialNetwork:
    """Immutable rooted tree of buses and lines.

    Parameters
    ----------
    lines : iterable
        ``(a, b, r, x)`` tuples or :class:`Line` objects. Orientation is
        normalised so that ``from_bus`` is the parent.
    n_buses : int, optional
        Total bus count including the substation. Defaults to the largest
        endpoint id plus one.
    """

    def __init__(self, lines, n_buses=None):
        records = [_as_tuple(ln) for ln in lines]
        parent = validate(records, n_buses)
        self.n_buses = len(parent)
        self.N = self.n_buses - 1
        self.parent = parent
        self.r = np.zeros(self.n_buses)
        self.x = np.zeros(self.n_buses)
        for a, b, r, x in records:
            child = b if parent[b] == a else a
            self.r[child] = r
            self.x[child] = x
        self.r.setflags(write=False)
        self.x.setflags(write=False)
        self.parent.setflags(write=False)

        self.children = [[] for _ in range(self.n_buses)]
        for k in range(1, self.n_buses):
            self.children[parent[k]].append(k)
        self.children = tuple(tuple(sorted(c)) for c in self.children)

        # BFS order from the root; parents always precede children.
        order = [0]
        for u in order:
            order.extend(self.children[u])
        self.order = np.array(order, dtype=int)

        depth = np.zeros(self.n_buses, dtype=int)
        for u in self.order[1:]:
            depth[u] = depth[parent[u]] + 1
        self.depth = depth
        self.depth.setflags(write=False)
        self._sens = None
        self._desc = None

    # ------------------------------------------------------------------
    @property
    def lines(self) -> list[Line]:
        return [Line(int(self.parent[k]), k, float(self.r[k]), float(self.x[k]))
                for k in range(1, self.n_buses)]

    @property
    def buses(self) -> range:
        return range(self.n_buses)

    def _check(self, i):
        if not (0 <= int(i) < self.n_buses):
            raise UnknownBus(i)
        return int(i)

    def ancestors(self, i) -> list[int]:
        """Buses on the path from ``i`` up to the root, ``i`` first."""
        i = self._check(i)
        out = [i]
        while out[-1] != 0:
            out.append(int(self.parent[out[-1]]))
        return out

    def path_to_root(self, i) -> list[int]:
        """Lines (identified by child bus) from bus ``i`` to the substation.

        The last entry is the line incident to bus 0.
        """
        return self.ancestors(i)[:-1]

    def mrca(self, i, j) -> int:
        """Most recent common ancestor (a bus is its own ancestor)."""
        i, j = self._check(i), self._check(j)
        while self.depth[i] > self.depth[j]:
            i = int(self.parent[i])
        while self.depth[j] > self.depth[i]:
            j = int(self.parent[j])
        while i != j:
            i, j = int(self.parent[i]), int(self.parent[j])
        return i

    def dist(self, i, j) -> int:
        k = self.mrca(i, j)
        return int(self.depth[i] + self.depth[j] - 2 * self.depth[k])

    def descendants(self, i) -> list[int]:
        """``i`` and every bus below it."""
        i = self._check(i)
        out = [i]
        for u in out:
            out.extend(self.children[u])
        return out

    def rth_descendants(self, i, r) -> list[int]:
        i = self._check(i)
        level = [i]
        for _ in range(r):
            level = [c for u in level for c in self.children[u]]
        return level

    def height(self, i) -> int:
        i = self._check(i)
        return int(max(self.depth[k] for k in self.descendants(i)) - self.depth[i])

    def diameter(self) -> int:
        """Largest tree distance between two non-root buses.

        Paths may pass through the substation. One BFS per bus; ``N`` is a
        few hundred at most for a feeder.
        """
        if self.N <= 1:
            return 0
        return max(self._eccentricity(i) for i in range(1, self.n_buses))

    def _eccentricity(self, start):
        dist = np.full(self.n_buses, -1)
        dist[start] = 0
        queue = deque([start])
        while queue:
            u = queue.popleft()
            nbrs = list(self.children[u])
            if u != 0:
                nbrs.append(int(self.parent[u]))
            for w in nbrs:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return int(dist[1:].max())

    def descendant_matrix(self) -> np.ndarray:
        """``T[a-1, b-1] = 1`` when bus ``b`` lies in the subtree of ``a``.

        Only non-root buses are indexed. Line flows satisfy ``P = T @ s``
        for any per-bus quantity ``s`` accumulated toward the root.
        """
        if self._desc is None:
            T = np.zeros((self.N, self.N))
            for k in range(1, self.n_buses):
                for a in self.path_to_root(k):
                    T[a - 1, k - 1] = 1.0
            T.setflags(write=False)
            self._desc = T
        return self._desc

    def sensitivity(self) -> SensitivityMatrices:
        """Cached :func:`build_sensitivity`."""
        if self._sens is None:
            self._sens = build_sensitivity(self)
        return self._sens

    def __repr__(self):
        return f"RadialNetwork(n_buses={self.n_buses}, depth={int(self.depth.max())})"


def build_sensitivity(network: RadialNetwork) -> SensitivityMatrices:
    """Sensitivity matrices of the linear DistFlow model.

    Entry ``(i, j)`` is twice the resistance (reactance) summed over the
    lines shared by the root paths of ``i`` and ``j``. The shared part ends
    at ``mrca(i, j)``, so the entry equals the diagonal at the common
    ancestor; diagonals come from a single pass down the tree.
    """
    nb = network.n_buses
    chi_r = np.zeros(nb)
    chi_x = np.zeros(nb)
    for k in network.order[1:]:
        p = network.parent[k]
        chi_r[k] = chi_r[p] + 2.0 * network.r[k]
        chi_x[k] = chi_x[p] + 2.0 * network.x[k]

    N = network.N
    R = np.zeros((N, N))
    X = np.zeros((N, N))
    for i in range(1, nb):
        R[i - 1, i - 1] = chi_r[i]
        X[i - 1, i - 1] = chi_x[i]
        for j in range(i + 1, nb):
            k = network.mrca(i, j)
            R[i - 1, j - 1] = R[j - 1, i - 1] = chi_r[k]
            X[i - 1, j - 1] = X[j - 1, i - 1] = chi_x[k]
    R.setflags(write=False)
    X.setflags(write=False)
    return SensitivityMatrices(R, X)


def diameter(network: RadialNetwork) -> int:
    return network.diameter()


def dist(network: RadialNetwork, i, j) -> int:
    return network.dist(i, j)


def mrca(network: RadialNetwork, i, j) -> int:
    return network.mrca(i, j)


# ----------------------------------------------------------------------
# File IO and generators


def read_network(path) -> RadialNetwork:
    """Parse a network file of ``line,<from>,<to>,<r>,<x>`` records.

    Blank lines and text after ``#`` are ignored.
    """
    lines = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        fields = [f.strip() for f in body.split(",")]
        if fields[0] != "line" or len(fields) != 5:
            raise ValueError(f"{path}:{lineno}: expected 'line,<from>,<to>,<r>,<x>', got {raw!r}")
        try:
            lines.append((int(fields[1]), int(fields[2]), float(fields[3]), float(fields[4])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return RadialNetwork(lines)


def write_network(network: RadialNetwork, path, header=None):
    out = []
    if header:
        out.extend(f"# {h}" for h in header.splitlines())
    for ln in network.lines:
        out.append(f"line,{ln.from_bus},{ln.to_bus},{ln.r!r},{ln.x!r}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def random_tree(n_buses, rng, r_range=(0.005, 0.05), x_range=(0.005, 0.05)) -> RadialNetwork:
    """Random recursive tree: bus ``k`` attaches to a uniform earlier bus."""
    lines = []
    for k in range(1, n_buses):
        p = int(rng.integers(0, k))
        lines.append((p, k, rng.uniform(*r_range), rng.uniform(*x_range)))
    return RadialNetwork(lines, n_buses)
