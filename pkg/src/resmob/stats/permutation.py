"""Two-sample permutation tests and the NPC-corrected multi-aspect ANOVA.

Three partial statistics share one set of relabelings:

* location: squared difference of group medians
* scale: squared difference of group MADs
* joint: ``max(max(U1, U2), max(V1, V2))`` where U are Mann-Whitney
  statistics of the raw values and V those of the squared deviations from
  each group's own median.

When the number of distinct relabelings ``C(n1 + n2, n1)`` does not exceed
``B`` every relabeling is enumerated and the p-value is the exact share of
arrangements at least as extreme as the observed one. Otherwise ``B``
random relabelings are drawn and ``p = (1 + #{T* >= T}) / (1 + B)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

KINDS = ("location", "scale", "joint")
# relative slack when counting permuted statistics as ">= observed"
_TIE_TOL = 1e-12


class PermutationError(ValueError):
    pass


@dataclass
class TestResult:
    statistic: float
    p_value: float
    n_permutations: int
    seed: int | None
    mode: str = "monte_carlo"
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NpcAnovaResult:
    p_location_raw: float
    p_scale_raw: float
    p_joint: float
    p_location_corrected: float
    p_scale_corrected: float
    statistics: dict
    n_permutations: int
    seed: int | None
    mode: str
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def robust_stats(sample) -> tuple[float, float]:
    """Median and unscaled median absolute deviation."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise PermutationError("robust_stats needs a non-empty sample")
    med = float(np.median(x))
    return med, float(np.median(np.abs(x - med)))


def permutation_stream(n: int, n_perm: int, seed: int, first: int = 0) -> np.ndarray:
    """Permutations ``first .. first + n_perm - 1`` of ``range(n)``.

    Replicate b depends only on (seed, b), so results do not depend on
    chunking or worker count.
    """
    out = np.empty((n_perm, n), dtype=np.intp)
    for k in range(n_perm):
        out[k] = np.random.default_rng([seed, first + k]).permutation(n)
    return out


def _group_masks(n1: int, n2: int, n_perm: int, seed: int | None):
    """Boolean membership of group 1, one row per arrangement.

    Returns ``(masks, exhaustive)``; the observed labelling is not included.
    """
    n = n1 + n2
    total = math.comb(n, n1)
    if total <= n_perm:
        masks = np.zeros((total, n), dtype=bool)
        for k, combo in enumerate(itertools.combinations(range(n), n1)):
            masks[k, list(combo)] = True
        return masks, True
    if seed is None:
        raise PermutationError("Monte Carlo mode needs a seed")
    perms = permutation_stream(n, n_perm, seed)
    masks = np.zeros((n_perm, n), dtype=bool)
    np.put_along_axis(masks, perms[:, :n1], True, axis=1)
    return masks, False


def _split(pooled: np.ndarray, masks: np.ndarray, n1: int):
    """Rows of group-1 and group-2 values for each arrangement (stable order)."""
    idx = np.argsort(~masks, axis=1, kind="stable")
    arranged = pooled[idx]
    return arranged[:, :n1], arranged[:, n1:]


def _mann_whitney_pair(ranks: np.ndarray, masks: np.ndarray, n1: int, n2: int):
    r1 = (ranks * masks).sum(axis=1)
    u1 = r1 - n1 * (n1 + 1) / 2.0
    return u1, n1 * n2 - u1


def partial_statistics(a: np.ndarray, b: np.ndarray, pooled: np.ndarray,
                       masks: np.ndarray, raw_ranks: np.ndarray) -> dict[str, np.ndarray]:
    """All three partial statistics for each row of group arrangements."""
    n1, n2 = a.shape[1], b.shape[1]
    med_a, med_b = np.median(a, axis=1), np.median(b, axis=1)
    mad_a = np.median(np.abs(a - med_a[:, None]), axis=1)
    mad_b = np.median(np.abs(b - med_b[:, None]), axis=1)
    u1, u2 = _mann_whitney_pair(raw_ranks[None, :], masks, n1, n2)
    # squared deviations from own-group medians, back in pooled positions
    own_med = np.where(masks, med_a[:, None], med_b[:, None])
    dev = (pooled[None, :] - own_med) ** 2
    v1, v2 = _mann_whitney_pair(rankdata(dev, axis=1), masks, n1, n2)
    return {
        "location": (med_a - med_b) ** 2,
        "scale": (mad_a - mad_b) ** 2,
        "joint": np.maximum(np.maximum(u1, u2), np.maximum(v1, v2)),
    }


def _p_value(observed: float, null: np.ndarray, exhaustive: bool) -> float:
    hits = int(np.sum(null >= observed - _TIE_TOL * abs(observed)))
    if exhaustive:
        return hits / len(null)
    return (1 + hits) / (1 + len(null))


def _run(g1, g2, n_perm: int, seed: int | None):
    a = np.asarray(g1, dtype=float).ravel()
    b = np.asarray(g2, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise PermutationError("both groups need at least two observations")
    if n_perm < 1:
        raise PermutationError("need at least one permutation")
    pooled = np.concatenate([a, b])
    raw_ranks = rankdata(pooled)
    observed_mask = np.zeros((1, pooled.size), dtype=bool)
    observed_mask[0, : a.size] = True
    observed = partial_statistics(a[None, :], b[None, :], pooled, observed_mask, raw_ranks)
    masks, exhaustive = _group_masks(a.size, b.size, n_perm, seed)
    ga, gb = _split(pooled, masks, a.size)
    null = partial_statistics(ga, gb, pooled, masks, raw_ranks)
    degenerate = bool(np.all(pooled == pooled[0]))
    return ({k: float(v[0]) for k, v in observed.items()}, null, exhaustive, degenerate,
            len(masks))


def partial_perm_test(g1, g2, kind: str = "location", n_perm: int = 999,
                      seed: int | None = 0) -> TestResult:
    if kind not in KINDS:
        raise PermutationError(f"unknown test kind {kind!r}")
    observed, null, exhaustive, degenerate, count = _run(g1, g2, n_perm, seed)
    p = 1.0 if degenerate else _p_value(observed[kind], null[kind], exhaustive)
    return TestResult(observed[kind], p, count, seed,
                      "exhaustive" if exhaustive else "monte_carlo", degenerate,
                      {"kind": kind})


def npc_anova(g1, g2, n_perm: int = 999, seed: int | None = 0) -> NpcAnovaResult:
    """Location and scale p-values corrected by the joint test.

    ``corrected_i = max(p_i, p_joint)`` with all three tests evaluated on the
    same relabelings.
    """
    observed, null, exhaustive, degenerate, count = _run(g1, g2, n_perm, seed)
    if degenerate:
        p = {k: 1.0 for k in KINDS}
    else:
        p = {k: _p_value(observed[k], null[k], exhaustive) for k in KINDS}
    return NpcAnovaResult(
        p_location_raw=p["location"],
        p_scale_raw=p["scale"],
        p_joint=p["joint"],
        p_location_corrected=max(p["location"], p["joint"]),
        p_scale_corrected=max(p["scale"], p["joint"]),
        statistics=observed,
        n_permutations=count,
        seed=seed,
        mode="exhaustive" if exhaustive else "monte_carlo",
        degenerate=degenerate,
    )
