"""Deep distances between internal vertices by exponential averaging.

An internal vertex ``a0`` is never observed.  Its distance to another
internal vertex ``b0`` is estimated from the leaf distances below them:
each leaf-pair term ``exp(-tau_hat(a', b'))`` is corrected by the inverse
of the (estimated) decay ``Theta(a0, a')`` along the path to ``a0``, and the
corrected terms are averaged over groups of leaves.  Several groups give a
bag of estimates; a dense-ball selection picks a robust representative, a
majority test screens out pairs that are too far apart, and the result is
rounded to the grid of multiples of ``Delta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InputError, ValidationError
from .tree import Phylogeny, RestrictedSubtree

G_STAR = 0.5 * math.log(2.0)

__all__ = [
    "G_STAR",
    "DeepConfig",
    "WeightTable",
    "AveragingGroup",
    "EstimateBag",
    "DeepDistance",
    "FlowAnalysis",
    "flow_estimator",
    "homogeneous_flow",
    "variance_bound",
    "exponential_average",
    "group_average",
    "dense_ball_select",
    "diameter_test",
    "round_to_grid",
    "deep_distance",
    "level_deep_distances",
    "three_point_weight",
    "distorted_metric_general",
    "DistortedMetricResult",
    "dump_bag",
    "dump_weights",
]


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DeepConfig:
    """Constants of the deep-distance pipeline.

    ``D`` defaults to ``4 g (dh + 2)`` where ``dh`` is the largest averaging
    depth used for the tree size at hand; pass a number to fix it.
    """

    Delta: float = 0.05
    f: float = 0.25
    g: float = 0.25
    alpha: float = 1.5
    W: float = 6.0
    D: float | None = None
    gamma: float = 3.0
    quartet_budget: int | None = None

    def __post_init__(self):
        if not (0 < self.Delta <= self.f <= self.g):
            raise ConfigError("need 0 < Delta <= f <= g")
        if self.g >= G_STAR:
            raise ConfigError(f"g must stay below ln(sqrt 2) = {G_STAR:.6f}")
        if self.W <= 5:
            raise ConfigError("W must exceed 5")
        if self.alpha <= 1:
            raise ConfigError("alpha must exceed 1")
        if self.D is not None and self.D <= 0:
            raise ConfigError("D must be positive")
        if self.quartet_budget is not None and self.quartet_budget < 1:
            raise ConfigError("quartet budget must be positive")

    def max_depth(self, n: int) -> int:
        """``floor(alpha log2 log2 n)``, and 0 for trees too small to average."""
        if n < 4:
            return 0
        return int(math.floor(self.alpha * math.log2(math.log2(n)) + 1e-12))

    def depth_at(self, level: int, n: int) -> int:
        return min(level, self.max_depth(n))

    def diameter(self, n: int) -> float:
        if self.D is not None:
            return float(self.D)
        return 4.0 * self.g * (self.max_depth(n) + 2)

    def threshold(self, n: int) -> float:
        return self.diameter(n) + math.log(self.W / 3.0)


# ---------------------------------------------------------------------------
# weights on a reconstructed forest


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Edge decays ``theta = exp(-length)`` on a (reconstructed) rooted forest.

    Edges are named by their lower endpoint.  ``source`` records whether the
    values were estimated from data or copied from a known tree.
    """

    children: Mapping[int, tuple[int, ...]]
    length: Mapping[int, float]
    leaf_label: Mapping[int, int]
    source: str = "estimated"

    @classmethod
    def leaves(cls, labels: Iterable[int]) -> "WeightTable":
        """The trivial forest of isolated leaves, vertex id = label."""
        labels = list(labels)
        return cls(children={a: () for a in labels}, length={}, leaf_label={a: a for a in labels})

    @classmethod
    def from_phylogeny(cls, tree: Phylogeny) -> "WeightTable":
        return cls(
            children=dict(tree.children),
            length=dict(tree.weight),
            leaf_label=dict(tree.leaf_label),
            source="exact",
        )

    def theta(self, v: int) -> float:
        return math.exp(-self.length[v])

    def extended(self, joins: Sequence[tuple[int, int, int, float, float]]) -> "WeightTable":
        """Add parents: each join is ``(z, x, y, length_zx, length_zy)``."""
        children = dict(self.children)
        length = dict(self.length)
        for z, x, y, lx, ly in joins:
            if z in children:
                raise InputError(f"vertex {z} already present")
            for c in (x, y):
                if c not in children:
                    raise InputError(f"unknown vertex {c}")
                if c in length:
                    raise InputError(f"vertex {c} already has a parent")
            children[z] = (x, y)
            length[x] = float(lx)
            length[y] = float(ly)
        return WeightTable(children=children, length=length, leaf_label=dict(self.leaf_label), source=self.source)

    def depth_below(self, x: int) -> dict[int, float]:
        """Path length from ``x`` to each leaf label below it."""
        out: dict[int, float] = {}
        stack = [(x, 0.0)]
        while stack:
            v, d = stack.pop()
            cs = self.children.get(v)
            if cs is None:
                raise InputError(f"vertex {v} missing from weight table")
            if not cs:
                out[self.leaf_label[v]] = d
            for c in cs:
                if c not in self.length:
                    raise InputError(f"no weight for the edge above {c}")
                stack.append((c, d + self.length[c]))
        return out

    def Theta(self, x: int, leaf: int) -> float:
        """Cumulative decay ``exp(-tau(x, leaf))`` along the stored path."""
        d = self.depth_below(x)
        if leaf not in d:
            raise InputError(f"leaf {leaf} is not below vertex {x}")
        return math.exp(-d[leaf])

    def groups(self, x: int, depth: int) -> list["AveragingGroup"]:
        """Leaf groups below the descendants of ``x`` at graph distance ``depth``.

        Branches that end early are padded with zero-length edges, so a leaf
        at distance ``d < depth`` forms ``2**(depth - d)`` singleton groups.
        Within a group each leaf carries the homogeneous flow weight
        ``2**-(edges from the group root)``.
        """
        return _groups(self.children, self.length, self.leaf_label, x, depth)


def _groups(children, length, leaf_label, x, depth) -> list["AveragingGroup"]:
    out: list[AveragingGroup] = []

    def min_label(v):
        while children[v]:
            v = min(children[v], key=min_label)
        return leaf_label[v]

    def collect(v, dist, hops, acc):
        cs = children[v]
        if not cs:
            acc.append((leaf_label[v], dist, hops))
            return
        for c in sorted(cs, key=min_label):
            collect(c, dist + length[c], hops + 1, acc)

    def descend(v, dist, remaining):
        cs = children[v]
        if remaining == 0 or not cs:
            acc: list[tuple[int, float, int]] = []
            collect(v, dist, 0, acc)
            labels = np.array([a for a, _, _ in acc], dtype=np.int64)
            dists = np.array([d for _, d, _ in acc])
            flow = np.array([2.0 ** -h for _, _, h in acc])
            group = AveragingGroup(labels=labels, flow=flow, log_theta=-dists)
            out.extend([group] * (2 ** remaining))
            return
        for c in sorted(cs, key=min_label):
            descend(c, dist + length[c], remaining - 1)

    if x not in children:
        raise InputError(f"vertex {x} missing from weight table")
    descend(x, 0.0, depth)
    return out


@dataclass(frozen=True, eq=False)
class AveragingGroup:
    """Leaves averaged together for one bag entry.

    ``log_theta`` holds ``-tau(a0, leaf)`` measured from the vertex whose
    distance is being estimated and ``flow`` the averaging weights (summing
    to one).
    """

    labels: np.ndarray
    flow: np.ndarray
    log_theta: np.ndarray

    @property
    def coefficients(self) -> np.ndarray:
        return self.flow * np.exp(-self.log_theta)


# ---------------------------------------------------------------------------
# flow estimator analysis


@dataclass(frozen=True)
class FlowAnalysis:
    S: float
    K_psi: float
    K_closed_form: float


def homogeneous_flow(tree: Phylogeny, root: int | None = None) -> dict[int, float]:
    """Flow through every vertex when mass splits evenly at each branching."""
    root = tree.root if root is None else root
    flow = {root: 1.0}
    stack = [root]
    while stack:
        v = stack.pop()
        for c in tree.children[v]:
            flow[c] = flow[v] / len(tree.children[v])
            stack.append(c)
    return flow


def _check_flow(tree: Phylogeny, root: int, flow: Mapping[int, float], tol: float = 1e-9):
    if abs(flow.get(root, 0.0) - 1.0) > tol:
        raise InputError("flow must carry unit mass out of the root")
    stack = [root]
    while stack:
        v = stack.pop()
        cs = tree.children[v]
        if cs:
            inflow = flow.get(v, 0.0)
            out = sum(flow.get(c, 0.0) for c in cs)
            if abs(out - inflow) > tol:
                raise InputError(f"flow is not conserved at vertex {v}")
            stack.extend(cs)
        if flow.get(v, 0.0) < -tol:
            raise InputError("flow must be nonnegative")


def flow_estimator(
    tree: Phylogeny,
    model,
    root: int | None,
    flow: Mapping[int, float],
    leaf_sigmas: Mapping[int, float],
) -> FlowAnalysis:
    """Weighted root estimator ``S`` and its excess variance ``K``.

    ``flow`` gives the mass through each vertex (1 at ``root``);
    ``leaf_sigmas`` is keyed by leaf label.  ``K`` comes from the leaf-up
    recursion with relative flows; ``K_closed_form`` from the edge sum
    ``sum (1 - theta_e^2) Psi(e)^2 / Theta(root, e)^2``.  The model only
    fixes the time scale (its second eigenvalue is -1).
    """
    root = tree.root if root is None else root
    _check_flow(tree, root, flow)
    theta = {v: math.exp(-w) for v, w in tree.weight.items()}

    # S and the closed form, walking down from the root
    S = 0.0
    closed = 0.0
    Theta = {root: 1.0}
    stack = [root]
    while stack:
        v = stack.pop()
        for c in tree.children[v]:
            Theta[c] = Theta[v] * theta[c]
            psi = flow.get(c, 0.0)
            closed += (1.0 - theta[c] ** 2) * psi**2 / Theta[c] ** 2
            stack.append(c)
        if not tree.children[v]:
            lab = tree.leaf_label[v]
            S += flow.get(v, 0.0) * leaf_sigmas[lab] / Theta[v]

    # recursion from the leaves with relative flows
    K: dict[int, float] = {}
    order = [v for v in tree.postorder if _below_root(tree, v, root)]
    for v in order:
        cs = tree.children[v]
        if not cs:
            K[v] = 0.0
            continue
        total = 0.0
        pv = flow.get(v, 0.0)
        for c in cs:
            rel = flow.get(c, 0.0) / pv if pv > 0 else 0.0
            total += ((1.0 - theta[c] ** 2) + K[c]) * rel**2 / theta[c] ** 2
        K[v] = total
    return FlowAnalysis(S=S, K_psi=K[root], K_closed_form=closed)


def _below_root(tree: Phylogeny, v: int, root: int) -> bool:
    while v != root:
        if v == tree.root:
            return False
        v = tree.parent[v]
    return True


def variance_bound(g: float) -> float:
    """Uniform bound ``1 / (1 - exp(-2 (g* - g)))`` on ``K`` for the homogeneous flow."""
    if g >= G_STAR:
        return math.inf
    return 1.0 / (1.0 - math.exp(-2.0 * (G_STAR - g)))


# ---------------------------------------------------------------------------
# averaging, dense balls, diameter test


def _tau_array(tau_hat) -> np.ndarray:
    return tau_hat.tau_hat if hasattr(tau_hat, "tau_hat") else np.asarray(tau_hat, dtype=float)


def _neg_log(x: float) -> float:
    return -math.log(x) if x > 0 else math.inf


def group_average(A: AveragingGroup, B: AveragingGroup, tau_hat) -> float:
    """One bag entry: weighted, decay-corrected average of ``exp(-tau_hat)``."""
    T = _tau_array(tau_hat)
    block = np.exp(-T[np.ix_(A.labels, B.labels)])
    return _neg_log(float(A.coefficients @ block @ B.coefficients))


def exponential_average(A_j, B_j, tau_hat, weights: WeightTable, a0: int, b0: int) -> float:
    """Uniform average over ``A_j x B_j`` of ``exp(-tau_hat) / (Theta(a0,a') Theta(b0,b'))``."""
    A = sorted(set(int(a) for a in A_j))
    B = sorted(set(int(b) for b in B_j))
    if not A or not B:
        raise InputError("leaf sets must be nonempty")
    da = weights.depth_below(a0)
    db = weights.depth_below(b0)
    missing = [a for a in A if a not in da] + [b for b in B if b not in db]
    if missing:
        raise InputError(f"no weight path to leaves {missing}")
    ga = AveragingGroup(np.array(A), np.full(len(A), 1.0 / len(A)), -np.array([da[a] for a in A]))
    gb = AveragingGroup(np.array(B), np.full(len(B), 1.0 / len(B)), -np.array([db[b] for b in B]))
    return group_average(ga, gb, tau_hat)


@dataclass(frozen=True, eq=False)
class EstimateBag:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise InputError("a bag needs at least one estimate")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


def _as_values(bag) -> np.ndarray:
    if isinstance(bag, EstimateBag):
        return bag.values
    v = np.asarray(bag, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InputError("a bag needs at least one estimate")
    return v


def _pair_gaps(v: np.ndarray) -> np.ndarray:
    # |v_i - v_j| over the last axis, with inf-inf = 0 and finite-inf = inf
    a = v[..., :, None]
    b = v[..., None, :]
    ia, ib = np.isinf(a), np.isinf(b)
    with np.errstate(invalid="ignore"):
        gap = np.abs(a - b)
    gap = np.where(ia & ib, 0.0, gap)
    return np.where(ia ^ ib, np.inf, gap)


def ball_quota(size: int) -> int:
    """Smallest count reaching two thirds of ``size``."""
    return (2 * size + 2) // 3


def _dense_ball(values: np.ndarray):
    # values: (..., N) -> tau_bar_prime, j_star, r_star, all over leading axes
    N = values.shape[-1]
    m = ball_quota(N)
    radii = np.sort(_pair_gaps(values), axis=-1)[..., m - 1]
    j = np.argmin(radii, axis=-1)
    pick = np.take_along_axis(values, j[..., None], axis=-1)[..., 0]
    r = np.take_along_axis(radii, j[..., None], axis=-1)[..., 0]
    return pick, j, r


def dense_ball_select(bag) -> tuple[float, int, float]:
    """Entry whose smallest two-thirds ball is tightest; ties go to the first."""
    v = _as_values(bag)
    pick, j, r = _dense_ball(v)
    return float(pick), int(j), float(r)


def diameter_test(bag, D: float, W: float) -> int:
    """1 when strictly more than half the bag lies at or below ``D + ln(W/3)``."""
    v = _as_values(bag)
    thr = D + math.log(W / 3.0)
    return int(2 * int(np.count_nonzero(v <= thr)) > v.size)


def round_to_grid(x: float, Delta: float) -> float:
    if math.isinf(x):
        return math.inf
    return math.floor(x / Delta + 0.5) * Delta


@dataclass(frozen=True, eq=False)
class DeepDistance:
    value: float
    sd_flag: int
    tau_bar_prime: float = math.inf
    j_star: int = 0
    r_star: float = math.inf
    bag: EstimateBag | None = field(default=None, repr=False)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


def _finish(values: np.ndarray, Delta: float, thr: float) -> DeepDistance:
    pick, j, r = dense_ball_select(values)
    sd = int(2 * int(np.count_nonzero(values <= thr)) > values.size)
    value = round_to_grid(pick, Delta) if sd else math.inf
    return DeepDistance(value=value, sd_flag=sd, tau_bar_prime=pick, j_star=j, r_star=r, bag=EstimateBag(values))


def deep_distance(
    a0: int,
    b0: int,
    tau_hat,
    weights: WeightTable,
    cfg: DeepConfig,
    depth: int,
    n: int | None = None,
) -> DeepDistance:
    """Rounded, diameter-screened estimate of the distance between ``a0`` and ``b0``.

    ``depth`` is the number of levels below each vertex at which the leaf
    groups are formed; group ``j`` below ``a0`` is paired with group ``j``
    below ``b0``.
    """
    T = _tau_array(tau_hat)
    n = T.shape[0] if n is None else n
    GA = weights.groups(a0, depth)
    GB = weights.groups(b0, depth)
    if len(GA) != len(GB):
        raise InputError("group counts differ")
    values = np.array([group_average(A, B, T) for A, B in zip(GA, GB)])
    return _finish(values, cfg.Delta, cfg.threshold(n))


@dataclass(frozen=True, eq=False)
class LevelDistances:
    """Deep distances among a cohort, in cohort order."""

    value: np.ndarray  # (m, m), inf off the screened pairs, 0 on the diagonal
    sd: np.ndarray  # (m, m) bits, diagonal 1
    bags: np.ndarray  # (m, m, groups)
    tau_bar_prime: np.ndarray
    j_star: np.ndarray
    r_star: np.ndarray


def level_deep_distances(
    cohort: Sequence[int],
    tau_hat,
    weights: WeightTable,
    cfg: DeepConfig,
    depth: int,
    n: int | None = None,
    groups: Sequence[list[AveragingGroup]] | None = None,
) -> LevelDistances:
    """All pairwise deep distances of a cohort at once.

    With ``P`` the leaf-by-group matrix of coefficients ``flow / Theta``,
    the group sums are ``P^T exp(-tau_hat) P``; pairing group ``j`` with
    group ``j`` reads the bags off that matrix.
    """
    T = _tau_array(tau_hat)
    n_leaves = T.shape[0]
    n = n_leaves if n is None else n
    m = len(cohort)
    if groups is None:
        groups = [weights.groups(c, depth) for c in cohort]
    G = len(groups[0])
    if any(len(gs) != G for gs in groups):
        raise InputError("cohort vertices have different group counts")
    P = np.zeros((n_leaves, m * G))
    for ci, gs in enumerate(groups):
        for j, grp in enumerate(gs):
            np.add.at(P[:, ci * G + j], grp.labels, grp.coefficients)
    E = np.exp(-T)
    S = P.T @ E @ P
    S4 = S.reshape(m, G, m, G)
    sums = np.einsum("ajbj->abj", S4)
    with np.errstate(divide="ignore", invalid="ignore"):
        bags = np.where(sums > 0, -np.log(np.where(sums > 0, sums, 1.0)), np.inf)
    # symmetrize to remove rounding asymmetry in the matrix product
    bags = np.minimum(bags, np.swapaxes(bags, 0, 1))
    pick, j, r = _dense_ball(bags)
    thr = cfg.threshold(n)
    sd = (2 * np.count_nonzero(bags <= thr, axis=-1) > G).astype(np.int8)
    with np.errstate(invalid="ignore"):
        value = np.where(sd == 1, np.floor(pick / cfg.Delta + 0.5) * cfg.Delta, np.inf)
    np.fill_diagonal(value, 0.0)
    np.fill_diagonal(sd, 1)
    return LevelDistances(value=value, sd=sd, bags=bags, tau_bar_prime=pick, j_star=j, r_star=r)


def three_point_weight(dab: float, dac: float, dbc: float) -> float:
    """Decay ``exp(-tau(z, a0))`` from the meeting point ``z`` of three vertices."""
    if not all(math.isfinite(x) for x in (dab, dac, dbc)):
        raise ValidationError("three-point weight is undefined for infinite distances")
    return math.exp(-0.5 * (dab + dac - dbc))


# ---------------------------------------------------------------------------
# distances between subtrees in general position


@dataclass(frozen=True)
class DistortedMetricResult:
    value: float
    corrected: Mapping[tuple[int, int], float]
    deep: Mapping[tuple[int, int], float]


def _restricted_children(T: RestrictedSubtree) -> tuple[dict, dict]:
    children: dict[int, tuple[int, ...]] = {}
    length: dict[int, float] = {}
    stack = [T.root]
    while stack:
        v = stack.pop()
        cs = T.children(v)
        children[v] = cs
        for c in cs:
            length[c] = T.edge_length(v, c)
            stack.append(c)
    return children, length


def distorted_metric_general(
    T1: RestrictedSubtree,
    T2: RestrictedSubtree,
    tau_hat,
    cfg: DeepConfig,
    n: int | None = None,
    detail: bool = False,
):
    """Distance between the roots of two edge-disjoint rooted subtrees.

    Deep distances are computed for the four pairs of root children, each
    corrected by the child-edge lengths.  If the four corrected values agree
    on the ``Delta`` grid the common value is returned, otherwise infinity.
    Subtrees are padded with zero-length edges so every averaging group sits
    at the full averaging depth.
    """
    T = _tau_array(tau_hat)
    n = T.shape[0] if n is None else n
    depth = cfg.max_depth(n)
    thr = cfg.threshold(n)
    sides = []
    for Ti in (T1, T2):
        if Ti.root is None or not Ti.is_legal():
            raise InputError("subtrees must be legal and rooted")
        children, length = _restricted_children(Ti)
        labels = {}
        for v, cs in children.items():
            if not cs:
                if v not in Ti.host.leaf_label:
                    raise InputError("subtree leaves must be leaves of the host tree")
                labels[v] = Ti.host.leaf_label[v]
        x = Ti.root
        kids = children[x] if children[x] else (x, x)
        sides.append((children, length, labels, x, kids))

    deep: dict[tuple[int, int], float] = {}
    corrected: dict[tuple[int, int], float] = {}
    (c1, l1, lab1, x1, kids1), (c2, l2, lab2, x2, kids2) = sides
    for a in kids1:
        GA = _groups(c1, l1, lab1, a, depth)
        for b in kids2:
            GB = _groups(c2, l2, lab2, b, depth)
            values = np.array([group_average(A, B, T) for A, B in zip(GA, GB)])
            d = _finish(values, cfg.Delta, thr).value
            deep[(a, b)] = d
            corrected[(a, b)] = d - (l1[a] if a != x1 else 0.0) - (l2[b] if b != x2 else 0.0)

    vals = list(corrected.values())
    if any(math.isinf(v) for v in vals):
        out = math.inf
    else:
        steps = {int(math.floor(v / cfg.Delta + 0.5)) for v in vals}
        out = corrected[(kids1[-1], kids2[-1])] if len(steps) == 1 else math.inf
    if detail:
        return DistortedMetricResult(value=out, corrected=corrected, deep=deep)
    return out


# ---------------------------------------------------------------------------
# debug dumps (one record per line)

BAG_HEADER = "# deepdist-bags v1"
WEIGHT_HEADER = "# deepdist-weights v1"


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def dump_bag(records: Iterable[tuple[str, DeepDistance]]) -> str:
    """``key sd value j_star r_star v1,v2,...`` per line."""
    lines = [BAG_HEADER]
    for key, dd in records:
        vals = ",".join(_fmt(v) for v in (dd.bag.values if dd.bag is not None else []))
        lines.append(f"{key} {dd.sd_flag} {_fmt(dd.value)} {dd.j_star} {_fmt(dd.r_star)} {vals}")
    return "\n".join(lines) + "\n"


def dump_weights(weights: WeightTable) -> str:
    """``child parent length theta`` per reconstructed edge."""
    parent = {c: p for p, cs in weights.children.items() for c in cs}
    lines = [WEIGHT_HEADER, f"source {weights.source}"]
    for c in sorted(parent):
        lines.append(f"{c} {parent[c]} {_fmt(weights.length[c])} {_fmt(weights.theta(c))}")
    return "\n".join(lines) + "\n"
