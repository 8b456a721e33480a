"""Community detection: Girvan-Newman edge betweenness and a two-level
map-equation greedy search."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .graph import MobilityNetwork, Partition

_REL_TOL = 1e-12


def edge_betweenness(weights: np.ndarray, active: np.ndarray | None = None
                     ) -> dict[tuple[int, int], float]:
    """Directed weighted edge betweenness (Brandes), arc length ``1 / w``.

    Counts every ordered source/target pair; shortest paths whose lengths
    agree to a relative 1e-12 are treated as ties.
    """
    n = weights.shape[0]
    if active is None:
        active = weights > 0
    succ = [[(j, 1.0 / weights[i, j]) for j in np.flatnonzero(active[i])] for i in range(n)]
    eb = {(i, j): 0.0 for i in range(n) for j in np.flatnonzero(active[i])}
    for s in range(n):
        dist = [np.inf] * n
        sigma = [0.0] * n
        preds: list[list[int]] = [[] for _ in range(n)]
        dist[s] = 0.0
        sigma[s] = 1.0
        order = []
        done = [False] * n
        heap = [(0.0, s)]
        while heap:
            d, v = heapq.heappop(heap)
            if done[v]:
                continue
            done[v] = True
            order.append(v)
            for u, length in succ[v]:
                nd = d + length
                if done[u]:
                    continue
                if nd < dist[u] - _REL_TOL * nd:
                    dist[u] = nd
                    sigma[u] = sigma[v]
                    preds[u] = [v]
                    heapq.heappush(heap, (nd, u))
                elif abs(nd - dist[u]) <= _REL_TOL * nd:
                    sigma[u] += sigma[v]
                    preds[u].append(v)
        delta = [0.0] * n
        for w in reversed(order):
            for v in preds[w]:
                c = sigma[v] / sigma[w] * (1.0 + delta[w])
                eb[(v, w)] += c
                delta[v] += c
    return eb


def weighted_modularity(weights: np.ndarray, labels) -> float:
    """Directed weighted modularity of a labelling."""
    m = weights.sum()
    if m == 0:
        return 0.0
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    expected = np.outer(weights.sum(axis=1), weights.sum(axis=0)) / m
    return float(((weights - expected) * same).sum() / m)


def _weak_components(active: np.ndarray) -> np.ndarray:
    n = active.shape[0]
    sym = active | active.T
    labels = -np.ones(n, dtype=int)
    current = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = current
        while stack:
            v = stack.pop()
            for u in np.flatnonzero(sym[v]):
                if labels[u] < 0:
                    labels[u] = current
                    stack.append(u)
        current += 1
    return labels


@dataclass
class GirvanNewmanResult:
    partition: Partition
    modularity: float
    removed_edges: list[tuple[str, str, float]]   # (sender, receiver, betweenness)
    history: list[tuple[int, float]] = field(default_factory=list)  # (n_communities, Q)


def edge_betweenness_communities(net: MobilityNetwork) -> GirvanNewmanResult:
    """Girvan-Newman: drop the highest-betweenness arc until no arcs remain
    and keep the split of maximal modularity (fewest communities on ties).

    Betweenness is recomputed after every removal; ties between arcs go to
    the lexicographically first ``(i, j)`` index pair.
    """
    w = net.weights
    active = w > 0
    labels = _weak_components(active)
    best_labels = labels.copy()
    best_q = weighted_modularity(w, labels)
    history = [(int(labels.max()) + 1 if labels.size else 0, best_q)]
    removed = []
    while active.any():
        eb = edge_betweenness(w, active)
        top = max(eb.values())
        i, j = min(e for e, v in eb.items() if v >= top - _REL_TOL * top)
        active[i, j] = False
        removed.append((net.nodes[i], net.nodes[j], top))
        new_labels = _weak_components(active)
        if new_labels.max() != labels.max():
            labels = new_labels
            q = weighted_modularity(w, labels)
            history.append((int(labels.max()) + 1, q))
            if q > best_q + 1e-12:
                best_q, best_labels = q, labels.copy()
    return GirvanNewmanResult(
        Partition(list(net.nodes), [int(x) for x in _relabel(best_labels)]),
        best_q, removed, history)


def _relabel(labels) -> np.ndarray:
    """Renumber labels by order of first appearance."""
    mapping: dict = {}
    return np.array([mapping.setdefault(x, len(mapping)) for x in labels])


# --- map equation ------------------------------------------------------------

def _plogp(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out


def flow_matrix(weights: np.ndarray, teleport: float = 0.15, tol: float = 1e-15,
                max_iter: int = 10000) -> tuple[np.ndarray, np.ndarray]:
    """Stationary visit rates and the link-flow matrix of a teleporting walk.

    The walker follows an out-arc with probability proportional to its weight
    and teleports uniformly with probability ``teleport`` (always from
    dangling nodes). Returns ``(p, E)`` with ``E[a, b] = p[a] * P[a, b]``.
    """
    n = weights.shape[0]
    out = weights.sum(axis=1)
    trans = np.full((n, n), 1.0 / n)
    has_out = out > 0
    trans[has_out] = teleport / n + (1 - teleport) * weights[has_out] / out[has_out, None]
    p = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        new = p @ trans
        new /= new.sum()
        if np.max(np.abs(new - p)) < tol:
            p = new
            break
        p = new
    return p, p[:, None] * trans


def map_equation(p: np.ndarray, flow: np.ndarray, labels) -> float:
    """Two-level map-equation codelength (bits) of a module assignment."""
    labels = np.asarray(labels)
    mods = np.unique(labels)
    enter = []
    visit = []
    for m in mods:
        inside = labels == m
        pm = p[inside].sum()
        internal = flow[np.ix_(inside, inside)].sum()
        enter.append(max(pm - internal, 0.0))
        visit.append(pm)
    q = np.array(enter)
    pm = np.array(visit)
    return float(_plogp(q.sum()) - 2 * _plogp(q).sum() - _plogp(p).sum()
                 + _plogp(q + pm).sum())


@dataclass
class MapEquationResult:
    partition: Partition
    codelength: float
    one_module_codelength: float
    trace: list[float]


class _ModuleState:
    """Per-module visit and internal-flow sums for O(n) move evaluation."""

    def __init__(self, p, flow, labels):
        self.p = p
        self.flow = flow
        self.sym = flow + flow.T
        self.labels = labels.copy()
        n = len(p)
        self.visit = np.bincount(labels, weights=p, minlength=n)
        self.size = np.bincount(labels, minlength=n)
        same = labels[:, None] == labels[None, :]
        self.internal = np.bincount(labels, weights=(flow * same).sum(axis=1), minlength=n)
        self.node_term = _plogp(p).sum()

    def exit(self):
        return np.maximum(self.visit - self.internal, 0.0)

    def codelength(self) -> float:
        q = self.exit()
        return float(_plogp(q.sum()) - 2 * _plogp(q).sum() - self.node_term
                     + _plogp(q + self.visit).sum())

    def move_delta(self, a: int, target: int, link_to_mod: np.ndarray) -> tuple[float, tuple]:
        src = self.labels[a]
        self_flow = self.flow[a, a]
        pa = self.p[a]
        vis_src = self.visit[src] - pa
        int_src = self.internal[src] - (link_to_mod[src] - self_flow)
        vis_tgt = self.visit[target] + pa
        int_tgt = self.internal[target] + link_to_mod[target] + self_flow
        q_old = self.exit()
        q_src_new = max(vis_src - int_src, 0.0)
        q_tgt_new = max(vis_tgt - int_tgt, 0.0)
        total_old = q_old.sum()
        total_new = total_old - q_old[src] - q_old[target] + q_src_new + q_tgt_new
        old = (_plogp(total_old) - 2 * (_plogp(q_old[src]) + _plogp(q_old[target]))
               + _plogp(q_old[src] + self.visit[src]) + _plogp(q_old[target] + self.visit[target]))
        new = (_plogp(total_new) - 2 * (_plogp(q_src_new) + _plogp(q_tgt_new))
               + _plogp(q_src_new + vis_src) + _plogp(q_tgt_new + vis_tgt))
        return float(new - old), (vis_src, int_src, vis_tgt, int_tgt)

    def apply(self, a: int, target: int, sums: tuple) -> None:
        src = self.labels[a]
        self.visit[src], self.internal[src], self.visit[target], self.internal[target] = sums
        self.size[src] -= 1
        self.size[target] += 1
        self.labels[a] = target


def map_equation_communities(net: MobilityNetwork, seed: int = 0, teleport: float = 0.15,
                             max_passes: int = 100) -> MapEquationResult:
    """Minimize the two-level map equation by greedy node moves.

    Starting from singletons, nodes are visited in a seeded random order and
    moved to the neighbouring module (or an empty one) that lowers the
    codelength most. Passes repeat until none improves; then whole modules
    are tried as merges into each neighbouring module the same way.
    """
    n = net.n
    if n <= 1:
        return MapEquationResult(Partition(list(net.nodes), [0] * n), 0.0, 0.0, [0.0])
    p, flow = flow_matrix(net.weights, teleport)
    state = _ModuleState(p, flow, np.arange(n))
    linked = (net.weights > 0) | (net.weights.T > 0)
    rng = np.random.default_rng(seed)
    trace = [state.codelength()]

    for _ in range(max_passes):
        moved = False
        for a in rng.permutation(n):
            link_to_mod = np.bincount(state.labels, weights=state.sym[a], minlength=n)
            src = state.labels[a]
            candidates = set(state.labels[linked[a]].tolist())
            empty = np.flatnonzero(state.size == 0)
            if state.size[src] > 1 and empty.size:
                candidates.add(int(empty[0]))
            candidates.discard(src)
            best, best_delta, best_sums = None, -1e-12, None
            for target in sorted(candidates):
                delta, sums = state.move_delta(a, target, link_to_mod)
                if delta < best_delta:
                    best, best_delta, best_sums = target, delta, sums
            if best is not None:
                state.apply(a, best, best_sums)
                trace.append(state.codelength())
                moved = True
        merged = _merge_modules(state, linked, trace)
        if not moved and not merged:
            break

    labels = _relabel(state.labels)
    one = map_equation(p, flow, np.zeros(n, dtype=int))
    return MapEquationResult(Partition(list(net.nodes), [int(x) for x in labels]),
                             trace[-1], one, trace)


def _merge_modules(state: _ModuleState, linked: np.ndarray, trace: list[float]) -> bool:
    """Greedily merge linked module pairs while the codelength drops."""
    merged_any = False
    while True:
        mods = np.unique(state.labels)
        member = (state.labels[:, None] == mods[None, :]).astype(float)
        mflow = member.T @ state.flow @ member
        mlink = (member.T @ linked.astype(float) @ member) > 0
        visit = state.visit[mods]
        q = np.maximum(visit - np.diag(mflow), 0.0)
        total = q.sum()
        best, best_delta = None, -1e-12
        for a in range(len(mods)):
            for b in range(a + 1, len(mods)):
                if not (mlink[a, b] or mlink[b, a]):
                    continue
                vis = visit[a] + visit[b]
                qn = max(vis - (mflow[a, a] + mflow[b, b] + mflow[a, b] + mflow[b, a]), 0.0)
                total_new = total - q[a] - q[b] + qn
                delta = (_plogp(total_new) - _plogp(total)
                         - 2 * (_plogp(qn) - _plogp(q[a]) - _plogp(q[b]))
                         + _plogp(qn + vis) - _plogp(q[a] + visit[a]) - _plogp(q[b] + visit[b]))
                if delta < best_delta:
                    best, best_delta = (mods[a], mods[b]), float(delta)
        if best is None:
            return merged_any
        keep, gone = best
        labels = state.labels.copy()
        labels[labels == gone] = keep
        state.__init__(state.p, state.flow, labels)
        trace.append(state.codelength())
        merged_any = True
