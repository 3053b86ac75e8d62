"""Pilot scheduling: overlap graph, DSatur grouping and greedy assignment of
time/frequency phase shifts to groups."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import TBGrid
from .pilots import PilotAssignment, equivalent_shift, overlap_eta


@dataclass(frozen=True)
class OverlapGraph:
    """Undirected graph; an edge joins two UTs whose overlap exceeds ``threshold``."""

    n: int
    edges: dict[tuple[int, int], float]
    threshold: float

    def neighbors(self) -> list[set[int]]:
        adj = [set() for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def degrees(self) -> list[int]:
        return [len(a) for a in self.neighbors()]


def build_overlap_graph(W_list, gamma: float) -> OverlapGraph:
    if not 0 <= gamma < 1:
        raise ValueError("threshold must lie in [0, 1)")
    n = len(W_list)
    edges = {}
    for u in range(n):
        for v in range(u + 1, n):
            eta = overlap_eta(W_list[u], W_list[v])
            if eta > gamma:
                edges[(u, v)] = eta
    return OverlapGraph(n, edges, gamma)


def graph_from_adjacency(adj: dict[int, set[int]] | list[set[int]]) -> OverlapGraph:
    """Unweighted graph from an adjacency structure (handy for tests)."""
    items = list(adj.items() if isinstance(adj, dict) else enumerate(adj))
    n = 1 + max([u for u, _ in items] + [v for _, nb in items for v in nb], default=-1)
    edges = {}
    for u, nb in items:
        for v in nb:
            if u != v:
                edges[(min(u, v), max(u, v))] = 1.0
    return OverlapGraph(n, edges, 0.0)


@dataclass(frozen=True)
class UTGroups:
    colors: np.ndarray  # 1..C per UT

    @property
    def count(self) -> int:
        return int(self.colors.max()) if self.colors.size else 0

    def members(self) -> list[list[int]]:
        return [np.flatnonzero(self.colors == c).tolist() for c in range(1, self.count + 1)]


def dsatur_group(graph: OverlapGraph) -> UTGroups:
    """DSatur colouring.

    Picks the uncoloured vertex with the most distinct neighbour colours,
    ties broken by higher degree then lower id (so the first pick is the
    max-degree vertex), and gives it the smallest colour not used by its
    neighbours.
    """
    adj = graph.neighbors()
    deg = [len(a) for a in adj]
    colors = np.zeros(graph.n, dtype=int)
    seen: list[set[int]] = [set() for _ in range(graph.n)]
    for _ in range(graph.n):
        u = min((v for v in range(graph.n) if colors[v] == 0),
                key=lambda v: (-len(seen[v]), -deg[v], v))
        c = 1
        while c in seen[u]:
            c += 1
        colors[u] = c
        for v in adj[u]:
            seen[v].add(c)
    return UTGroups(colors)


def group_powers(groups: UTGroups, W_list) -> list[np.ndarray]:
    return [np.sum([W_list[u] for u in g], axis=0) for g in groups.members()]


def _eta_or_zero(A: np.ndarray, B: np.ndarray) -> float:
    if not A.any() or not B.any():
        return 0.0
    return overlap_eta(A, B)


def assign_tfpsp(groups: UTGroups, W_list, grid: TBGrid, gamma: float = 0.05,
                 phi_stride: int | None = None, time_shifts: bool = True) -> tuple[PilotAssignment, list[float]]:
    """Greedy phase assignment, group by group.

    Group 1 keeps ``(0, 0)``. Every later group takes the first pair in scan
    order whose shifted power overlaps the already scheduled power by at most
    ``gamma``; failing that, the pair with the least overlap. The scan tries
    every time shift before moving to the next frequency shift (multiples of
    ``phi_stride``), so cheap separations along the short Doppler axis win.
    ``time_shifts=False`` restricts the scan to frequency shifts only.

    Returns the assignment and the overlap reached by each group.
    """
    cfg = grid.cfg
    stride = cfg.N_f if phi_stride is None else phi_stride
    if stride < 1:
        raise ValueError("phi_stride must be positive")
    phis = range(0, cfg.K, stride)
    varphis = range(cfg.N_p) if time_shifts else range(1)
    pairs = [(vp, p) for p in phis for vp in varphis]
    Wg = group_powers(groups, W_list)
    phi = np.zeros(len(W_list), dtype=int)
    varphi = np.zeros(len(W_list), dtype=int)
    etas = [0.0]
    if not Wg:
        return PilotAssignment(phi, varphi), []
    scheduled = Wg[0].copy()
    members = groups.members()
    for i in range(1, len(Wg)):
        best, best_eta = None, np.inf
        for vp, p in pairs:
            shifted = equivalent_shift(Wg[i], p, vp, grid)
            eta = _eta_or_zero(shifted, scheduled)
            if eta <= gamma:
                best, best_eta = (vp, p), eta
                break
            if eta < best_eta:
                best, best_eta = (vp, p), eta
        vp, p = best
        phi[members[i]] = p
        varphi[members[i]] = vp
        scheduled += equivalent_shift(Wg[i], p, vp, grid)
        etas.append(float(best_eta))
    return PilotAssignment(phi, varphi), etas


def schedule_objective(W_list, assignment: PilotAssignment, grid: TBGrid) -> float:
    """Sum of pairwise overlaps of the shifted power distributions (ordered pairs)."""
    S = [equivalent_shift(W, assignment.phi[u], assignment.varphi[u], grid)
         for u, W in enumerate(W_list)]
    total = 0.0
    for u in range(len(S)):
        for v in range(u + 1, len(S)):
            total += 2 * _eta_or_zero(S[u], S[v])
    return total


def schedule(W_list, grid: TBGrid, gamma: float = 0.05, scheme: str = "tfpsp",
             phi_stride: int | None = None) -> tuple[PilotAssignment, UTGroups, list[float]]:
    """Grouping plus phase assignment for ``scheme`` in ``{"tfpsp", "fpsp"}``."""
    if scheme not in ("tfpsp", "fpsp"):
        raise ValueError(f"unknown pilot scheme {scheme!r}")
    groups = dsatur_group(build_overlap_graph(W_list, gamma))
    asg, etas = assign_tfpsp(groups, W_list, grid, gamma, phi_stride,
                             time_shifts=scheme == "tfpsp")
    return asg, groups, etas
