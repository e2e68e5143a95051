"""Level-by-level cherry picking on homogeneous phylogenies.

Each round takes the current cohort (the reconstructed vertices at one
level), computes deep distances among them, keeps the quartet splits that
pass the deep four-point test, pairs up the cohort into cherries and gives
every cherry a new parent whose child-edge lengths come from a three-point
estimate.  Only the leaf distance matrix is consumed.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .deep import AveragingGroup, DeepConfig, LevelDistances, WeightTable, level_deep_distances
from .distances import DistanceMatrix
from .errors import InputError, ReconstructionFailure, TrialTimeout
from .tree import Phylogeny, QuartetSplit

# Deep distances sit on the Delta grid; comparisons against thresholds on the
# same grid must not be decided by rounding noise.
GRID_TOL = 1e-9

__all__ = [
    "deep_four_point",
    "sd_set",
    "pick_cherries",
    "LevelRecord",
    "ReconstructionLog",
    "reconstruct_homogeneous",
    "run_reconstruction",
]


def deep_four_point(a, b, c, d, dist, f: float) -> int:
    """1 when ``1/2 [d(a,c) + d(b,d) - d(a,b) - d(c,d)] > f/2``; 0 on any infinite distance."""
    vals = (dist[a, c], dist[b, d], dist[a, b], dist[c, d])
    if any(math.isinf(v) for v in vals):
        return 0
    F = 0.5 * (vals[0] + vals[1] - vals[2] - vals[3])
    return int(F - f / 2.0 > GRID_TOL)


def sd_set(S: Sequence, sd) -> int:
    """Conjunction of the pairwise screening bits over ``S``."""
    S = list(S)
    if len(S) < 2:
        raise InputError("need at least two vertices")
    return int(all(sd[x, y] for x, y in itertools.combinations(S, 2)))


def _pair_counts(R, index: dict) -> tuple[np.ndarray, np.ndarray]:
    m = len(index)
    grouped = np.zeros((m, m), dtype=np.int64)
    separated = np.zeros((m, m), dtype=np.int64)
    for q in R:
        (a, b), (c, d) = q.left, q.right
        ia, ib, ic, id_ = index[a], index[b], index[c], index[d]
        for x, y in ((ia, ib), (ic, id_)):
            grouped[x, y] += 1
            grouped[y, x] += 1
        for x, y in ((ia, ic), (ia, id_), (ib, ic), (ib, id_)):
            separated[x, y] += 1
            separated[y, x] += 1
    return grouped, separated


def _cherries_from_counts(grouped: np.ndarray, separated: np.ndarray, level: int) -> list[tuple[int, int]]:
    m = grouped.shape[0]
    ok = (grouped > 0) & (separated == 0)
    np.fill_diagonal(ok, False)
    pairs = [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(ok)))]
    degree = ok.sum(axis=1)
    if np.any(degree != 1):
        lonely = int(np.count_nonzero(degree == 0))
        crowded = int(np.count_nonzero(degree > 1))
        raise ReconstructionFailure(
            level,
            "cherry-partition",
            f"{lonely} vertices without a partner, {crowded} with several",
        )
    return pairs


def pick_cherries(R, cohort: Sequence, level: int = 0) -> set[frozenset]:
    """Pairs grouped by some split of ``R`` and separated by none.

    Raises ``ReconstructionFailure`` unless the pairs partition the cohort.
    """
    cohort = list(cohort)
    index = {v: i for i, v in enumerate(cohort)}
    for q in R:
        for v in q.left + q.right:
            if v not in index:
                raise InputError(f"split mentions {v}, which is not in the cohort")
    grouped, separated = _pair_counts(R, index)
    pairs = _cherries_from_counts(grouped, separated, level)
    return {frozenset((cohort[i], cohort[j])) for i, j in pairs}


# ---------------------------------------------------------------------------
# quartet screening on a whole level


def _screened_quartets(sd: np.ndarray) -> np.ndarray:
    """All index quartets i<j<k<l whose six screening bits are 1."""
    m = sd.shape[0]
    adj = sd.astype(bool).copy()
    np.fill_diagonal(adj, False)
    out = []
    for i in range(m):
        Ni = np.flatnonzero(adj[i, i + 1 :]) + i + 1
        for j in Ni:
            Nij = Ni[(Ni > j) & adj[j, Ni]]
            if len(Nij) < 2:
                continue
            sub = adj[np.ix_(Nij, Nij)]
            ks, ls = np.nonzero(np.triu(sub, 1))
            if len(ks):
                block = np.empty((len(ks), 4), dtype=np.int64)
                block[:, 0] = i
                block[:, 1] = j
                block[:, 2] = Nij[ks]
                block[:, 3] = Nij[ls]
                out.append(block)
    if not out:
        return np.empty((0, 4), dtype=np.int64)
    return np.concatenate(out)


def _apply_budget(quartets: np.ndarray, m: int, budget: int | None) -> np.ndarray:
    if budget is None:
        return quartets
    used = np.zeros(m, dtype=np.int64)
    keep = []
    for row in quartets:
        if np.all(used[row] < budget):
            used[row] += 1
            keep.append(row)
    return np.array(keep, dtype=np.int64).reshape(-1, 4)


def _accepted_splits(quartets: np.ndarray, dist: np.ndarray, f: float) -> tuple[np.ndarray, np.ndarray]:
    """Rows of (x, y, z, w) meaning the split xy|zw passed the deep four-point test."""
    if len(quartets) == 0:
        return np.empty((0, 4), dtype=np.int64), np.zeros(3, dtype=np.int64)
    a, b, c, d = quartets.T
    dab, dac, dad = dist[a, b], dist[a, c], dist[a, d]
    dbc, dbd, dcd = dist[b, c], dist[b, d], dist[c, d]
    F = np.stack(
        [
            0.5 * (dac + dbd - dab - dcd),  # ab|cd
            0.5 * (dab + dcd - dac - dbd),  # ac|bd
            0.5 * (dab + dcd - dad - dbc),  # ad|bc
        ],
        axis=1,
    )
    with np.errstate(invalid="ignore"):
        passed = np.isfinite(F) & (F - f / 2.0 > GRID_TOL)
    layouts = [
        np.stack([a, b, c, d], axis=1),
        np.stack([a, c, b, d], axis=1),
        np.stack([a, d, b, c], axis=1),
    ]
    rows = [layouts[s][passed[:, s]] for s in range(3)]
    return np.concatenate(rows), passed.sum(axis=0)


def _counts_from_rows(rows: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    grouped = np.zeros((m, m), dtype=np.int64)
    separated = np.zeros((m, m), dtype=np.int64)
    if len(rows):
        x, y, z, w = rows.T
        for p, q in ((x, y), (z, w)):
            np.add.at(grouped, (p, q), 1)
            np.add.at(grouped, (q, p), 1)
        for p, q in ((x, z), (x, w), (y, z), (y, w)):
            np.add.at(separated, (p, q), 1)
            np.add.at(separated, (q, p), 1)
    return grouped, separated


# ---------------------------------------------------------------------------
# the main loop


@dataclass
class LevelRecord:
    level: int
    cohort_size: int
    depth: int
    screened_pairs: int = 0
    quartets_tested: int = 0
    splits_accepted: int = 0
    cherries: list[tuple[int, int]] = field(default_factory=list)
    witnesses: list[dict] = field(default_factory=list)
    failure: str | None = None

    def summary(self) -> str:
        s = (
            f"level {self.level}: cohort {self.cohort_size}, depth {self.depth}, "
            f"screened pairs {self.screened_pairs}, quartets {self.quartets_tested}, "
            f"accepted splits {self.splits_accepted}, cherries {len(self.cherries)}"
        )
        if self.failure:
            s += f", FAILED: {self.failure}"
        return s


@dataclass
class ReconstructionLog:
    n: int
    levels: list[LevelRecord] = field(default_factory=list)
    weights: WeightTable | None = None
    tree: Phylogeny | None = None
    failure: ReconstructionFailure | None = None

    def text(self) -> str:
        lines = [r.summary() for r in self.levels]
        if self.failure is not None:
            lines.append(f"aborted: {self.failure}")
        return "\n".join(lines)


def _naive_groups(weights: WeightTable, cohort: Sequence[int]) -> list[list[AveragingGroup]]:
    out = []
    for c in cohort:
        below = weights.depth_below(c)
        lab = min(below)
        out.append([AveragingGroup(np.array([lab]), np.array([1.0]), np.array([-below[lab]]))])
    return out


def _level_distances(tau, weights, cohort, cfg, level, n, mode) -> tuple[LevelDistances, int]:
    if mode == "deep":
        depth = cfg.depth_at(level, n)
        return level_deep_distances(cohort, tau, weights, cfg, depth, n=n), depth
    if mode == "naive":
        groups = _naive_groups(weights, cohort)
        return level_deep_distances(cohort, tau, weights, cfg, 0, n=n, groups=groups), 0
    raise InputError(f"unknown mode {mode!r}")


def _choose_witness(i: int, j: int, dist: np.ndarray, sd: np.ndarray) -> tuple[int | None, list[int]]:
    m = dist.shape[0]
    cands = [w for w in range(m) if w not in (i, j) and sd[i, w] and sd[j, w]]
    if not cands:
        return None, []
    score = [dist[i, w] + dist[j, w] for w in cands]
    best = cands[int(np.argmin(score))]
    return best, cands


def run_reconstruction(
    distances,
    cfg: DeepConfig,
    n: int | None = None,
    mode: str = "deep",
    deadline: float | None = None,
) -> ReconstructionLog:
    """Reconstruct and return the full log; failures are recorded, not raised.

    ``deadline`` is a ``time.monotonic()`` value checked between levels;
    running past it raises ``TrialTimeout``.
    """
    tau = distances.tau_hat if isinstance(distances, DistanceMatrix) else np.asarray(distances, dtype=float)
    n_leaves = tau.shape[0]
    n = n_leaves if n is None else int(n)
    if n != n_leaves:
        raise InputError("leaf count does not match the distance matrix")
    if n < 1 or n & (n - 1):
        raise InputError("homogeneous reconstruction needs n to be a power of two")
    h = n.bit_length() - 1
    log = ReconstructionLog(n=n)
    weights = WeightTable.leaves(range(n))
    cohort = list(range(n))
    next_id = n
    try:
        if n == 1:
            log.weights = weights
            log.tree = Phylogeny(children={0: ()}, weight={}, root=0, leaf_label={0: 0})
            return log
        for level in range(h - 1):
            if deadline is not None and time.monotonic() > deadline:
                raise TrialTimeout(f"deadline passed before level {level}")
            ld, depth = _level_distances(tau, weights, cohort, cfg, level, n, mode)
            m = len(cohort)
            rec = LevelRecord(level=level, cohort_size=m, depth=depth)
            log.levels.append(rec)
            rec.screened_pairs = int((np.count_nonzero(ld.sd) - m) // 2)
            quartets = _apply_budget(_screened_quartets(ld.sd), m, cfg.quartet_budget)
            rec.quartets_tested = len(quartets)
            rows, _ = _accepted_splits(quartets, ld.value, cfg.f)
            rec.splits_accepted = len(rows)
            grouped, separated = _counts_from_rows(rows, m)
            try:
                pairs = _cherries_from_counts(grouped, separated, level)
            except ReconstructionFailure as e:
                rec.failure = e.reason + ": " + e.detail
                raise
            joins = []
            new_cohort = []
            dist = ld.value
            for i, j in pairs:
                x, y = cohort[i], cohort[j]
                rec.cherries.append((x, y))
                if not ld.sd[i, j]:
                    rec.failure = "cherry with infinite distance"
                    raise ReconstructionFailure(level, "missing-witness", f"cherry ({x}, {y}) failed screening")
                w, cands = _choose_witness(i, j, dist, ld.sd)
                if w is None:
                    rec.failure = "no witness"
                    raise ReconstructionFailure(level, "missing-witness", f"no screened witness for ({x}, {y})")
                lx = 0.5 * (dist[i, j] + dist[i, w] - dist[j, w])
                ly = 0.5 * (dist[i, j] + dist[j, w] - dist[i, w])
                alternatives = sorted(
                    {round(math.exp(-0.5 * (dist[i, j] + dist[i, u] - dist[j, u])), 12) for u in cands if u != w}
                )
                rec.witnesses.append(
                    {"pair": (x, y), "witness": cohort[w], "length": (lx, ly), "alternative_theta_x": alternatives}
                )
                if lx <= GRID_TOL or ly <= GRID_TOL:
                    rec.failure = "nonpositive edge"
                    raise ReconstructionFailure(
                        level, "nonpositive-edge", f"estimated lengths {lx:.4g}, {ly:.4g} for ({x}, {y})"
                    )
                z = next_id
                next_id += 1
                joins.append((z, x, y, lx, ly))
                new_cohort.append(z)
            weights = weights.extended(joins)
            cohort = new_cohort

        # final join of the last two vertices
        level = h - 1
        ld, depth = _level_distances(tau, weights, cohort, cfg, level, n, mode)
        rec = LevelRecord(level=level, cohort_size=2, depth=depth)
        log.levels.append(rec)
        d = float(ld.value[0, 1])
        rec.screened_pairs = int(ld.sd[0, 1])
        if not math.isfinite(d) or d <= GRID_TOL:
            rec.failure = "final join"
            raise ReconstructionFailure(level, "final-join", f"distance between the last two vertices is {d}")
        root = next_id
        weights = weights.extended([(root, cohort[0], cohort[1], d / 2.0, d / 2.0)])
        log.weights = weights
        log.tree = Phylogeny(
            children=dict(weights.children),
            weight=dict(weights.length),
            root=root,
            leaf_label=dict(weights.leaf_label),
        )
    except ReconstructionFailure as e:
        log.failure = e
        log.weights = weights
    return log


def reconstruct_homogeneous(distances, n: int | None = None, cfg: DeepConfig | None = None, mode: str = "deep") -> Phylogeny:
    """Reconstructed tree; the root sits at the midpoint of the last join.

    Raises ``ReconstructionFailure`` (with the log attached as ``.log``)
    when a level cannot be completed.
    """
    cfg = DeepConfig() if cfg is None else cfg
    log = run_reconstruction(distances, cfg, n=n, mode=mode)
    if log.failure is not None:
        log.failure.log = log
        raise log.failure
    return log.tree


def accepted_splits_as_quartets(rows: np.ndarray, cohort: Sequence[int]) -> list[QuartetSplit]:
    return [QuartetSplit.of(*(cohort[i] for i in row)) for row in rows]
