"""Weighted directed mobility networks and node-level structure."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..ingest import CUMULATIVE, FlowTable

STRENGTH_MODES = ("in", "out", "total")


class NetworkError(ValueError):
    pass


@dataclass
class MobilityNetwork:
    """Node list plus weight matrix ``weights[i, j]`` = researchers i -> j."""

    nodes: list[str]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        n = len(self.nodes)
        if self.weights.shape != (n, n):
            raise NetworkError(f"weight matrix shape {self.weights.shape} does not match {n} nodes")
        if np.any(self.weights < 0):
            raise NetworkError("negative weights")
        if np.any(np.diag(self.weights) != 0):
            raise NetworkError("self loops are not allowed")

    @property
    def adjacency(self) -> np.ndarray:
        return (self.weights > 0).astype(int)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def subnetwork(self, keep: Sequence[str]) -> "MobilityNetwork":
        idx = [self.nodes.index(g) for g in keep]
        return MobilityNetwork([self.nodes[i] for i in idx], self.weights[np.ix_(idx, idx)])

    def edges(self):
        rows, cols = np.nonzero(self.weights)
        return [(self.nodes[i], self.nodes[j], float(self.weights[i, j]))
                for i, j in zip(rows, cols)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sender", "receiver", "weight"])
            for s, r, w in sorted(self.edges()):
                writer.writerow([s, r, repr(w)])

    @classmethod
    def from_csv(cls, path: str | Path, nodes: Sequence[str] | None = None) -> "MobilityNetwork":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if nodes is None:
            nodes = sorted({r["sender"] for r in rows} | {r["receiver"] for r in rows})
        nodes = list(nodes)
        idx = {g: k for k, g in enumerate(nodes)}
        w = np.zeros((len(nodes), len(nodes)))
        for r in rows:
            w[idx[r["sender"]], idx[r["receiver"]]] += float(r["weight"])
        return cls(nodes, w)


def from_flow_table(table: FlowTable, time="cumulative") -> MobilityNetwork:
    """Network over the table's region universe for all years or one year."""
    if table.scope != "internal":
        raise NetworkError("networks are built from internal-scope flow tables only")
    nodes = list(table.regions)
    idx = {g: k for k, g in enumerate(nodes)}
    w = np.zeros((len(nodes), len(nodes)))
    for (year, s, r), c in table.entries.items():
        if time != "cumulative" and year != time:
            continue
        w[idx[s], idx[r]] += float(c)
    return MobilityNetwork(nodes, w)


def node_strength(net: MobilityNetwork, mode: str = "total") -> np.ndarray:
    if mode not in STRENGTH_MODES:
        raise NetworkError(f"unknown strength mode {mode!r}")
    w = net.weights
    if mode == "out":
        return w.sum(axis=1)
    if mode == "in":
        return w.sum(axis=0)
    return w.sum(axis=1) + w.sum(axis=0)


@dataclass
class HitsScores:
    nodes: list[str]
    hub: np.ndarray
    authority: np.ndarray
    iterations: int
    converged: bool

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["region", "hub", "authority"])
            for g, h, a in zip(self.nodes, self.hub, self.authority):
                writer.writerow([g, repr(float(h)), repr(float(a))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "HitsScores":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([r["region"] for r in rows],
                   np.array([float(r["hub"]) for r in rows]),
                   np.array([float(r["authority"]) for r in rows]), 0, True)


def hits_scores(net: MobilityNetwork, tol: float = 1e-10, max_iter: int = 1000) -> HitsScores:
    """Hub and authority scores by power iteration on the weight matrix.

    Both vectors start at all-ones and are rescaled to unit Euclidean norm
    after every update; iteration stops once neither vector moves by more
    than ``tol`` in max-norm.
    """
    w = net.weights
    if not np.any(w > 0):
        raise NetworkError("HITS needs at least one positive weight")
    hub = np.ones(net.n) / np.sqrt(net.n)
    auth = hub.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_auth = w.T @ hub
        new_auth /= np.linalg.norm(new_auth)
        new_hub = w @ new_auth
        new_hub /= np.linalg.norm(new_hub)
        delta = max(np.max(np.abs(new_auth - auth)), np.max(np.abs(new_hub - hub)))
        hub, auth = new_hub, new_auth
        if delta < tol:
            converged = True
            break
    return HitsScores(list(net.nodes), hub, auth, it, converged)


@dataclass
class SCoreResult:
    nodes: list[str]
    shell: np.ndarray          # 1 = most peripheral shell
    thresholds: list[float]    # thresholds[k-1] removed shell k
    mode: str

    @property
    def n_shells(self) -> int:
        return len(self.thresholds)

    def core(self, k: int) -> list[str]:
        """Nodes of the k-th core (shell index >= k)."""
        return [g for g, s in zip(self.nodes, self.shell) if s >= k]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["region", "shell", "threshold"])
            for g, s in zip(self.nodes, self.shell):
                writer.writerow([g, int(s), repr(float(self.thresholds[s - 1]))])

    @classmethod
    def from_csv(cls, path: str | Path, mode: str = "total") -> "SCoreResult":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        shells = np.array([int(r["shell"]) for r in rows])
        thresholds = [0.0] * (int(shells.max()) if len(rows) else 0)
        for r in rows:
            thresholds[int(r["shell"]) - 1] = float(r["threshold"])
        return cls([r["region"] for r in rows], shells, thresholds, mode)


def _sub_strength(w: np.ndarray, alive: np.ndarray, mode: str) -> np.ndarray:
    sub = w * alive[:, None] * alive[None, :]
    if mode == "out":
        return sub.sum(axis=1)
    if mode == "in":
        return sub.sum(axis=0)
    return sub.sum(axis=1) + sub.sum(axis=0)


def s_core_decomposition(net: MobilityNetwork, mode: str = "total") -> SCoreResult:
    """Peel the network into s-shells.

    The next threshold is the minimum strength inside the current core.
    Nodes at or below it are removed, strengths are recomputed on the
    survivors, and removal repeats until every survivor is strictly above
    the threshold. Everything removed at one threshold forms one shell.
    """
    if mode not in STRENGTH_MODES:
        raise NetworkError(f"unknown strength mode {mode!r}")
    n = net.n
    alive = np.ones(n, dtype=bool)
    shell = np.zeros(n, dtype=int)
    thresholds: list[float] = []
    while alive.any():
        strength = _sub_strength(net.weights, alive, mode)
        threshold = float(strength[alive].min())
        thresholds.append(threshold)
        k = len(thresholds)
        while True:
            drop = alive & (strength <= threshold)
            if not drop.any():
                break
            shell[drop] = k
            alive &= ~drop
            strength = _sub_strength(net.weights, alive, mode)
    return SCoreResult(list(net.nodes), shell, thresholds, mode)


@dataclass
class Partition:
    nodes: list[str]
    labels: list

    def __post_init__(self):
        if len(self.nodes) != len(self.labels):
            raise NetworkError("every node needs exactly one label")
        if len(set(self.nodes)) != len(self.nodes):
            raise NetworkError("duplicate nodes in partition")

    def as_dict(self) -> dict:
        return dict(zip(self.nodes, self.labels))

    def groups(self) -> list[list[str]]:
        out: dict = {}
        for g, lab in zip(self.nodes, self.labels):
            out.setdefault(lab, []).append(g)
        return sorted((sorted(v) for v in out.values()), key=lambda v: (v[0], len(v)))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["region", "label"])
            for g, lab in zip(self.nodes, self.labels):
                writer.writerow([g, lab])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Partition":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([r["region"] for r in rows], [r["label"] for r in rows])


def type7_quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation sample quantile (R's default, type 7)."""
    x = np.sort(np.asarray(values, dtype=float))
    h = (len(x) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(x) - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


def quantile_partition(nodes: Sequence[str], scores: Sequence[float], q: float | None = 0.9,
                       other_scores: Sequence[float] | None = None,
                       cutoff: float | None = None) -> Partition:
    """Label nodes ``high`` or ``low`` by score.

    With ``q`` a node is high when its score reaches the type-7 q-quantile;
    with ``cutoff`` it is high when strictly above the absolute cutoff.
    ``other_scores`` marks a node high when it qualifies in either set.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise NetworkError("cannot partition an empty score vector")
    sets = [scores] if other_scores is None else [scores, np.asarray(other_scores, dtype=float)]
    high = np.zeros(len(scores), dtype=bool)
    for s in sets:
        if cutoff is not None:
            high |= s > cutoff
        else:
            if not 0 < q < 1:
                raise NetworkError(f"quantile level must lie in (0, 1), got {q}")
            # absorb rounding in the interpolated threshold
            slack = 1e-12 * float(np.ptp(s))
            high |= s >= type7_quantile(s, q) - slack
    return Partition(list(nodes), ["high" if h else "low" for h in high])


def congruence(p1: Partition, p2: Partition) -> float:
    """Share of nodes carrying the same label in both partitions."""
    if set(p1.nodes) != set(p2.nodes) or len(p1.nodes) != len(p2.nodes):
        raise NetworkError("partitions are defined on different node sets")
    other = p2.as_dict()
    agree = sum(other[g] == lab for g, lab in zip(p1.nodes, p1.labels))
    return agree / len(p1.nodes)
