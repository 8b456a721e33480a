"""Slow, independent reference implementations used by the tests."""
import itertools
import math

import numpy as np


def hits_eigen(w):
    """Dominant eigenvectors of W^T W (authority) and W W^T (hub), unit norm, non-negative."""
    out = []
    for m in (w.T @ w, w @ w.T):
        vals, vecs = np.linalg.eigh(m)
        v = vecs[:, -1]
        v = v if v.sum() >= 0 else -v
        out.append(v / np.linalg.norm(v))
    return out[1], out[0]


def strength(w, alive, mode):
    n = len(w)
    s = {}
    for i in alive:
        o = sum(w[i][j] for j in alive)
        inn = sum(w[j][i] for j in alive)
        s[i] = {"out": o, "in": inn, "total": o + inn}[mode]
    return s


def s_core_peeling(w, mode):
    """Literal iterative removal: the threshold is the minimum strength in the
    current core; nodes at or below it are removed one at a time with
    strengths recomputed from scratch after each removal."""
    w = [list(map(float, row)) for row in w]
    alive = set(range(len(w)))
    shell = {}
    k = 0
    while alive:
        k += 1
        s = strength(w, alive, mode)
        t = min(s.values())
        while True:
            s = strength(w, alive, mode)
            low = sorted(i for i in alive if s[i] <= t)
            if not low:
                break
            alive.discard(low[0])
            shell[low[0]] = k
    return [shell[i] for i in range(len(w))]


def all_simple_paths(adj, s, t):
    stack = [(s, [s])]
    while stack:
        v, path = stack.pop()
        for u in adj[v]:
            if u == t:
                yield path + [u]
            elif u not in path:
                stack.append((u, path + [u]))


def betweenness_by_paths(w):
    """Edge betweenness by enumerating every simple path between every pair."""
    n = len(w)
    adj = {i: [j for j in range(n) if w[i][j] > 0] for i in range(n)}
    eb = {(i, j): 0.0 for i in range(n) for j in adj[i]}
    for s, t in itertools.permutations(range(n), 2):
        paths = list(all_simple_paths(adj, s, t))
        if not paths:
            continue
        lengths = [sum(1.0 / w[a][b] for a, b in zip(p, p[1:])) for p in paths]
        best = min(lengths)
        shortest = [p for p, L in zip(paths, lengths) if abs(L - best) <= 1e-12 * best]
        for p in shortest:
            for a, b in zip(p, p[1:]):
                eb[(a, b)] += 1.0 / len(shortest)
    return eb


def modularity_loops(w, labels):
    n = len(w)
    m = sum(map(sum, w))
    out = [sum(w[i]) for i in range(n)]
    inn = [sum(w[j][i] for j in range(n)) for i in range(n)]
    q = 0.0
    for i in range(n):
        for j in range(n):
            if labels[i] == labels[j]:
                q += w[i][j] - out[i] * inn[j] / m
    return q / m


def pagerank_flow(w, tau=0.15):
    """Teleporting random walk: stationary visits and link flows (loops)."""
    n = len(w)
    out = [sum(row) for row in w]
    p = [1.0 / n] * n
    for _ in range(10000):
        new = [0.0] * n
        for i in range(n):
            if out[i] > 0:
                for j in range(n):
                    new[j] += p[i] * ((1 - tau) * w[i][j] / out[i] + tau / n)
            else:
                for j in range(n):
                    new[j] += p[i] / n
        if max(abs(a - b) for a, b in zip(new, p)) < 1e-15:
            p = new
            break
        p = new
    flow = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if out[i] > 0:
                flow[i][j] = p[i] * ((1 - tau) * w[i][j] / out[i] + tau / n)
            else:
                flow[i][j] = p[i] / n
    return p, flow


def map_equation_loops(p, flow, labels):
    def h(x):
        return x * math.log2(x) if x > 0 else 0.0
    mods = sorted(set(labels))
    n = len(p)
    q = {}
    pin = {}
    for m in mods:
        members = [i for i in range(n) if labels[i] == m]
        visit = sum(p[i] for i in members)
        inside = sum(flow[i][j] for i in members for j in members)
        q[m] = visit - inside
        pin[m] = visit
    total_exit = sum(q.values())
    return (h(total_exit) - 2 * sum(h(q[m]) for m in mods) - sum(h(x) for x in p)
            + sum(h(q[m] + pin[m]) for m in mods))


def median(xs):
    s = sorted(xs)
    n = len(s)
    return s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2


def mad(xs):
    m = median(xs)
    return median([abs(x - m) for x in xs])


def midranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def npc_statistics(a, b):
    n1, n2 = len(a), len(b)
    pooled = list(a) + list(b)
    r = midranks(pooled)
    u1 = sum(r[:n1]) - n1 * (n1 + 1) / 2
    ma, mb = median(a), median(b)
    dev = [(x - ma) ** 2 for x in a] + [(x - mb) ** 2 for x in b]
    rv = midranks(dev)
    v1 = sum(rv[:n1]) - n1 * (n1 + 1) / 2
    return {"location": (ma - mb) ** 2, "scale": (mad(a) - mad(b)) ** 2,
            "joint": max(max(u1, n1 * n2 - u1), max(v1, n1 * n2 - v1))}


def exhaustive_p(a, b):
    """Exact tie-inclusive p-values over all C(n, n1) relabelings."""
    pooled = list(a) + list(b)
    n, n1 = len(pooled), len(a)
    obs = npc_statistics(a, b)
    hits = {k: 0 for k in obs}
    total = 0
    for combo in itertools.combinations(range(n), n1):
        g1 = [pooled[i] for i in combo]
        g2 = [pooled[i] for i in range(n) if i not in combo]
        st = npc_statistics(g1, g2)
        total += 1
        for k in obs:
            if st[k] >= obs[k] - 1e-12 * abs(obs[k]):
                hits[k] += 1
    return {k: hits[k] / total for k in obs}, obs
