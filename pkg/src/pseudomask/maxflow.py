"""Exact s-t max-flow / min-cut on small capacitated graphs, with an
exhaustive enumeration oracle and the reduction from the instance
labeling energy."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .energy import InstanceEnergy

EPS = 1e-9
_RES_EPS = 1e-12  # residual capacity below this counts as saturated

SOURCE_SIDE = 1
SINK_SIDE = 0


@dataclass(frozen=True)
class FlowNetwork:
    """s-t network over n ordinary nodes. t_links give per-node
    source->node and node->sink capacities; n_links (i, j, cap) are
    symmetric capacity pairs (cap in both directions)."""

    n: int
    cap_source: np.ndarray
    cap_sink: np.ndarray
    n_links: tuple

    def __post_init__(self):
        if len(self.cap_source) != self.n or len(self.cap_sink) != self.n:
            raise ValueError("t-link arrays must have length n")
        for arr in (self.cap_source, self.cap_sink):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("capacities must be finite and >= 0")
        for i, j, cap in self.n_links:
            if not (0 <= i < self.n and 0 <= j < self.n and i != j):
                raise ValueError(f"bad n-link endpoints ({i}, {j})")
            if not (np.isfinite(cap) and cap >= 0):
                raise ValueError("capacities must be finite and >= 0")


@dataclass(frozen=True)
class CutResult:
    """flow: max-flow value = min-cut capacity. side[i] is SOURCE_SIDE (1)
    for nodes on the source side of the cut, SINK_SIDE (0) otherwise."""

    flow: float
    side: np.ndarray


class _Dinic:
    def __init__(self, n: int):
        self.n = n
        self.head: list[list[int]] = [[] for _ in range(n)]
        self.to: list[int] = []
        self.cap: list[float] = []

    def add_edge(self, u: int, v: int, cap: float, rcap: float = 0.0):
        self.head[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(cap)
        self.head[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(rcap)

    def bfs_levels(self, s: int, t: int):
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for eid in self.head[u]:
                v = self.to[eid]
                if level[v] < 0 and self.cap[eid] > _RES_EPS:
                    level[v] = level[u] + 1
                    q.append(v)
        return level if level[t] >= 0 else None

    def dfs_augment(self, u: int, t: int, pushed: float, level, it) -> float:
        if u == t:
            return pushed
        while it[u] < len(self.head[u]):
            eid = self.head[u][it[u]]
            v = self.to[eid]
            if self.cap[eid] > _RES_EPS and level[v] == level[u] + 1:
                got = self.dfs_augment(v, t, min(pushed, self.cap[eid]), level, it)
                if got > 0:
                    self.cap[eid] -= got
                    self.cap[eid ^ 1] += got
                    return got
            it[u] += 1
        return 0.0

    def max_flow(self, s: int, t: int) -> float:
        flow = 0.0
        while True:
            level = self.bfs_levels(s, t)
            if level is None:
                return flow
            it = [0] * self.n
            while True:
                pushed = self.dfs_augment(s, t, float("inf"), level, it)
                if pushed <= 0:
                    break
                flow += pushed

    def reachable_from(self, s: int) -> np.ndarray:
        seen = np.zeros(self.n, dtype=bool)
        seen[s] = True
        q = deque([s])
        while q:
            u = q.popleft()
            for eid in self.head[u]:
                v = self.to[eid]
                if not seen[v] and self.cap[eid] > _RES_EPS:
                    seen[v] = True
                    q.append(v)
        return seen


def solve_max_flow(g: FlowNetwork) -> CutResult:
    """Dinic's algorithm; the cut's source side is the set of nodes still
    reachable from the source in the final residual graph, so zero-capacity
    ties land on the sink side."""
    s, t = g.n, g.n + 1
    d = _Dinic(g.n + 2)
    for i in range(g.n):
        if g.cap_source[i] > 0:
            d.add_edge(s, i, float(g.cap_source[i]))
        if g.cap_sink[i] > 0:
            d.add_edge(i, t, float(g.cap_sink[i]))
    for i, j, cap in g.n_links:
        if cap > 0:
            d.add_edge(i, j, float(cap), float(cap))
    flow = d.max_flow(s, t)
    side = np.where(d.reachable_from(s)[:g.n], SOURCE_SIDE, SINK_SIDE)
    return CutResult(flow=flow, side=side)


def cut_capacity(g: FlowNetwork, side: np.ndarray) -> float:
    """Capacity of the cut induced by a side assignment (1 = source side)."""
    src = np.asarray(side) == SOURCE_SIDE
    total = float(g.cap_source[~src].sum() + g.cap_sink[src].sum())
    for i, j, cap in g.n_links:
        if src[i] != src[j]:
            total += cap
    return total


def brute_force_min_cut(g: FlowNetwork) -> CutResult:
    """Enumerate all 2^n partitions; ties resolve to the lexicographically
    smallest side vector. Refuses n > 20."""
    if g.n > 20:
        raise ValueError(f"brute force refused for n={g.n} > 20")
    if g.n == 0:
        return CutResult(flow=0.0, side=np.zeros(0, dtype=int))
    n = g.n
    idx = np.arange(1 << n, dtype=np.int64)
    bits = ((idx[:, None] >> np.arange(n)) & 1).astype(np.float64)
    cost = bits @ g.cap_sink + (1.0 - bits) @ g.cap_source
    for i, j, cap in g.n_links:
        cost += cap * (bits[:, i] != bits[:, j])
    best = cost.min()
    ties = np.nonzero(cost <= best + 1e-12)[0]
    # lexicographic order over the side vector, side[0] most significant
    keys = (bits[ties] @ (1 << np.arange(n - 1, -1, -1, dtype=np.int64))).astype(np.int64)
    pick = ties[np.argmin(keys)]
    side = ((pick >> np.arange(n)) & 1).astype(int)
    return CutResult(flow=float(cost[pick]), side=side)


def energy_to_network(e: InstanceEnergy) -> tuple[FlowNetwork, np.ndarray]:
    """Reduce the submodular binary energy to an s-t network. Hard
    background ids are dropped (label fixed 0); source side = foreground.
    id_map[i] is the node index of energy id i, or -1 if pinned."""
    id_map = np.full(e.n, -1, dtype=int)
    free = np.nonzero(~e.hard_bg)[0]
    id_map[free] = np.arange(len(free))
    cap_source = e.cost_bg[free].copy()
    cap_sink = e.cost_fg[free].copy()
    n_links = []
    for (i, j), w in sorted(e.pairwise.items()):
        fi, fj = id_map[i], id_map[j]
        if fi >= 0 and fj >= 0:
            n_links.append((int(fi), int(fj), float(w)))
        elif fi >= 0:
            cap_sink[fi] += w  # neighbor pinned background: pay w if i is fg
        elif fj >= 0:
            cap_sink[fj] += w
    g = FlowNetwork(n=len(free), cap_source=cap_source, cap_sink=cap_sink,
                    n_links=tuple(n_links))
    return g, id_map


def labeling_from_cut(e: InstanceEnergy, cut: CutResult,
                      id_map: np.ndarray) -> np.ndarray:
    """Binary labels for all energy ids: pinned ids are 0, free ids take
    1 on the cut's source side."""
    lab = np.zeros(e.n, dtype=int)
    free = id_map >= 0
    lab[free] = cut.side[id_map[free]]
    return lab


def to_dimacs(g: FlowNetwork) -> str:
    """DIMACS max-flow text format; node 1 = source, node 2 = sink,
    ordinary node i becomes node i+3. Real capacities are printed as-is."""
    lines = [f"p max {g.n + 2} {2 * g.n + 2 * len(g.n_links)}",
             "n 1 s", "n 2 t"]
    for i in range(g.n):
        lines.append(f"a 1 {i + 3} {g.cap_source[i]:.17g}")
        lines.append(f"a {i + 3} 2 {g.cap_sink[i]:.17g}")
    for i, j, cap in g.n_links:
        lines.append(f"a {i + 3} {j + 3} {cap:.17g}")
        lines.append(f"a {j + 3} {i + 3} {cap:.17g}")
    return "\n".join(lines) + "\n"
