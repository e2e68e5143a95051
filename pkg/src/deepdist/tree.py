"""Rooted binary phylogenies, tree metrics, quartets and restricted subtrees.

Vertices are plain integers with no meaning beyond identity; leaves carry
integer labels ``0..n-1`` which are the only canonical names.  Each
non-root vertex stores the length of the edge to its parent, so an edge is
identified by its lower endpoint throughout this module.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, NoDecisionError, ValidationError

__all__ = [
    "Phylogeny",
    "TreeMetric",
    "QuartetSplit",
    "RestrictedSubtree",
    "SubtreePairClassification",
    "path_length",
    "four_point_split",
    "restrict",
    "clade_subtree",
    "classify_subtree_pair",
    "splits",
    "split_lengths",
    "unrooted_equal",
    "robinson_foulds",
    "parse_newick",
    "to_newick",
]


@dataclass(frozen=True, eq=False)
class Phylogeny:
    """A rooted, edge-weighted, leaf-labeled binary tree.

    ``children`` maps every vertex to its children (empty for leaves),
    ``weight`` maps every non-root vertex to the length of its parent edge
    and ``leaf_label`` maps leaf vertices to labels.  Zero-length edges are
    rejected unless ``allow_zero`` is set; they are only needed when a
    general tree is padded out to a complete one.
    """

    children: Mapping[int, tuple[int, ...]]
    weight: Mapping[int, float]
    root: int
    leaf_label: Mapping[int, int]
    allow_zero: bool = False

    def __post_init__(self):
        self._validate()

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[int, int, float]],
        leaf_label: Mapping[int, int],
        root: int | None = None,
        allow_zero: bool = False,
    ) -> "Phylogeny":
        children: dict[int, list[int]] = {}
        weight: dict[int, float] = {}
        seen_child = set()
        for p, c, w in edges:
            children.setdefault(p, []).append(c)
            children.setdefault(c, [])
            if c in seen_child:
                raise ValidationError(f"vertex {c} has two parents")
            seen_child.add(c)
            weight[c] = float(w)
        if not children:
            if root is None or len(leaf_label) != 1:
                raise ValidationError("empty edge list needs a single-vertex root")
            children[root] = []
        if root is None:
            roots = [v for v in children if v not in seen_child]
            if len(roots) != 1:
                raise ValidationError(f"expected one root, found {len(roots)}")
            root = roots[0]
        return cls(
            children={v: tuple(cs) for v, cs in children.items()},
            weight=weight,
            root=root,
            leaf_label=dict(leaf_label),
            allow_zero=allow_zero,
        )

    def _validate(self):
        if self.root not in self.children:
            raise ValidationError("root is not a vertex")
        if self.root in self.weight:
            raise ValidationError("root must not carry an edge weight")
        count = 0
        stack = [self.root]
        seen = set()
        while stack:
            v = stack.pop()
            if v in seen:
                raise ValidationError("cycle detected")
            seen.add(v)
            count += 1
            cs = self.children[v]
            if cs and len(cs) != 2:
                raise ValidationError(f"vertex {v} has {len(cs)} children; trees must be binary")
            for c in cs:
                if c not in self.children:
                    raise ValidationError(f"child {c} missing from vertex table")
                w = self.weight.get(c)
                if w is None or not math.isfinite(w):
                    raise ValidationError(f"edge above {c} has no finite weight")
                if w < 0 or (w == 0 and not self.allow_zero):
                    raise ValidationError(f"edge above {c} has non-positive weight {w}")
                stack.append(c)
        if count != len(self.children):
            raise ValidationError("vertex table contains unreachable vertices")
        leaves = {v for v, cs in self.children.items() if not cs}
        if set(self.leaf_label) != leaves:
            raise ValidationError("leaf labels must cover exactly the leaves")
        labels = sorted(self.leaf_label.values())
        if labels != list(range(len(labels))):
            raise ValidationError("leaf labels must be a bijection onto 0..n-1")

    # -- structure -------------------------------------------------------

    @cached_property
    def parent(self) -> dict[int, int]:
        return {c: p for p, cs in self.children.items() for c in cs}

    @property
    def n(self) -> int:
        return len(self.leaf_label)

    @cached_property
    def label_vertex(self) -> dict[int, int]:
        return {lab: v for v, lab in self.leaf_label.items()}

    @property
    def vertices(self) -> tuple[int, ...]:
        return self.preorder

    @cached_property
    def preorder(self) -> tuple[int, ...]:
        out = []
        stack = [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(reversed(self.children[v]))
        return tuple(out)

    @cached_property
    def postorder(self) -> tuple[int, ...]:
        return tuple(reversed(self.preorder))

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(self.parent[v], v) for v in self.preorder if v != self.root]

    def is_leaf(self, v: int) -> bool:
        return not self.children[v]

    @cached_property
    def depth(self) -> dict[int, float]:
        """Distance from the root to every vertex."""
        d = {self.root: 0.0}
        for v in self.preorder:
            for c in self.children[v]:
                d[c] = d[v] + self.weight[c]
        return d

    @cached_property
    def level(self) -> dict[int, int]:
        """Number of edges between each vertex and the root."""
        lv = {self.root: 0}
        for v in self.preorder:
            for c in self.children[v]:
                lv[c] = lv[v] + 1
        return lv

    @cached_property
    def _below(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, tuple[int, ...]] = {}
        for v in self.postorder:
            cs = self.children[v]
            if not cs:
                out[v] = (self.leaf_label[v],)
            else:
                out[v] = tuple(sorted(out[cs[0]] + out[cs[1]]))
        return out

    def leaves_below(self, v: int) -> tuple[int, ...]:
        """Sorted labels of the leaves descending from ``v``."""
        return self._below[v]

    def adjacency(self) -> dict[int, dict[int, float]]:
        adj: dict[int, dict[int, float]] = {v: {} for v in self.children}
        for p, c in self.edges:
            adj[p][c] = self.weight[c]
            adj[c][p] = self.weight[c]
        return adj

    def is_homogeneous(self) -> bool:
        """True when the tree is a complete binary tree (all leaves at one level)."""
        levels = {self.level[v] for v in self.leaf_label}
        return len(levels) == 1

    # -- metrics ---------------------------------------------------------

    def tree_metric(self) -> "TreeMetric":
        n = self.n
        d = np.zeros((n, n))
        dep = self.depth
        for v in self.postorder:
            cs = self.children[v]
            if not cs:
                continue
            left = np.array(self._below[cs[0]])
            right = np.array(self._below[cs[1]])
            dl = np.array([dep[self.label_vertex[a]] for a in left])
            dr = np.array([dep[self.label_vertex[b]] for b in right])
            block = dl[:, None] + dr[None, :] - 2.0 * dep[v]
            d[np.ix_(left, right)] = block
            d[np.ix_(right, left)] = block.T
        return TreeMetric(d)

    def path(self, u: int, v: int) -> list[int]:
        """Edges (named by their lower endpoint) on the path from u to v."""
        for x in (u, v):
            if x not in self.children:
                raise InputError(f"unknown vertex {x}")
        lv = self.level
        par = self.parent
        up, down = [], []
        a, b = u, v
        while lv[a] > lv[b]:
            up.append(a)
            a = par[a]
        while lv[b] > lv[a]:
            down.append(b)
            b = par[b]
        while a != b:
            up.append(a)
            down.append(b)
            a, b = par[a], par[b]
        return up + down[::-1]

    # -- derived trees ---------------------------------------------------

    def relabeled(self, mapping: Mapping[int, int]) -> "Phylogeny":
        """Copy with internal/leaf vertex ids renamed (labels untouched)."""
        m = lambda v: mapping.get(v, v)  # noqa: E731
        return Phylogeny(
            children={m(v): tuple(m(c) for c in cs) for v, cs in self.children.items()},
            weight={m(v): w for v, w in self.weight.items()},
            root=m(self.root),
            leaf_label={m(v): lab for v, lab in self.leaf_label.items()},
            allow_zero=self.allow_zero,
        )

    def with_labels(self, perm: Sequence[int]) -> "Phylogeny":
        """Copy whose leaf labelled ``a`` is relabelled ``perm[a]``."""
        return Phylogeny(
            children=self.children,
            weight=self.weight,
            root=self.root,
            leaf_label={v: int(perm[lab]) for v, lab in self.leaf_label.items()},
            allow_zero=self.allow_zero,
        )

    def rerooted(self, below: int) -> "Phylogeny":
        """Re-root at the midpoint of the edge above vertex ``below``."""
        if below == self.root or below not in self.children:
            raise InputError("re-rooting needs a non-root vertex")
        adj = self.adjacency()
        # dissolve the old root
        r = self.root
        a, b = self.children[r]
        wa, wb = adj[r][a], adj[r][b]
        del adj[a][r], adj[b][r]
        del adj[r]
        adj[a][b] = adj[b][a] = wa + wb
        p = self.parent[below]
        if p == r:
            p = b if below == a else a
        w = adj[below][p]
        del adj[below][p], adj[p][below]
        new_root = max(self.children) + 1
        adj[new_root] = {below: w / 2, p: w / 2}
        adj[below][new_root] = w / 2
        adj[p][new_root] = w / 2
        edges = []
        stack = [(new_root, None)]
        while stack:
            v, par = stack.pop()
            for nb, wt in adj[v].items():
                if nb != par:
                    edges.append((v, nb, wt))
                    stack.append((nb, v))
        return Phylogeny.from_edges(edges, self.leaf_label, root=new_root, allow_zero=self.allow_zero)


def path_length(tree: Phylogeny, u: int, v: int) -> float:
    """Sum of edge weights on the path between vertices u and v."""
    return float(sum(tree.weight[e] for e in tree.path(u, v)))


@dataclass(frozen=True, eq=False)
class TreeMetric:
    """Symmetric leaf-pair distances; entries may be ``inf``."""

    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InputError("a metric must be a square matrix")
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def __getitem__(self, ab):
        return self.d[ab]

    def satisfies_four_point(self, atol: float = 1e-9) -> bool:
        """Check that the two largest of the three pair sums tie, for every quartet."""
        from itertools import combinations

        d = self.d
        for a, b, c, e in combinations(range(self.n), 4):
            s = sorted((d[a, b] + d[c, e], d[a, c] + d[b, e], d[a, e] + d[b, c]))
            if abs(s[2] - s[1]) > atol:
                return False
        return True


@dataclass(frozen=True)
class QuartetSplit:
    """An unordered bipartition of four leaves into two pairs."""

    pairs: frozenset

    @classmethod
    def of(cls, a, b, c, d) -> "QuartetSplit":
        if len({a, b, c, d}) != 4:
            raise InputError("a quartet needs four distinct leaves")
        return cls(frozenset((frozenset((a, b)), frozenset((c, d)))))

    @property
    def left(self) -> tuple:
        return min(tuple(sorted(p)) for p in self.pairs)

    @property
    def right(self) -> tuple:
        return max(tuple(sorted(p)) for p in self.pairs)

    def separates(self, x, y) -> bool:
        return all(not {x, y} <= p for p in self.pairs) and any(x in p for p in self.pairs) and any(
            y in p for p in self.pairs
        )

    def __str__(self):
        (a, b), (c, d) = self.left, self.right
        return f"{a}{b}|{c}{d}" if max(a, b, c, d) < 10 else f"{a},{b}|{c},{d}"


def _metric_array(metric) -> np.ndarray:
    return metric.d if isinstance(metric, TreeMetric) else np.asarray(metric, dtype=float)


def four_point_split(metric, a, b, c, d) -> tuple[QuartetSplit, float]:
    """Four-point test on leaves a, b, c, d.

    Returns the inferred split and ``F = (d(a,c) + d(b,d) - d(a,b) - d(c,d)) / 2``.
    ``F > 0`` gives ab|cd, ``F < 0`` gives ac|bd and a tie gives ad|bc, so
    callers wanting a decision should treat ``F == 0`` as undecided.
    """
    m = _metric_array(metric)
    if len({a, b, c, d}) != 4:
        raise InputError("four_point_split needs four distinct leaves")
    vals = (m[a, c], m[b, d], m[a, b], m[c, d], m[a, d], m[b, c])
    if not all(math.isfinite(v) for v in vals):
        raise NoDecisionError("infinite distance in quartet")
    F = 0.5 * (m[a, c] + m[b, d] - m[a, b] - m[c, d])
    if F > 0:
        return QuartetSplit.of(a, b, c, d), F
    if F < 0:
        return QuartetSplit.of(a, c, b, d), F
    return QuartetSplit.of(a, d, b, c), F


# ---------------------------------------------------------------------------
# splits and unrooted comparison


def _check_same_leaves(t1: Phylogeny, t2: Phylogeny):
    if set(t1.leaf_label.values()) != set(t2.leaf_label.values()):
        raise InputError("trees have different leaf sets")


def _normalize(side: frozenset, everything: frozenset) -> frozenset:
    return side if 0 not in side else everything - side


def split_lengths(tree: Phylogeny) -> dict[frozenset, float]:
    """Map each unrooted edge (as the leaf side not holding label 0) to its length.

    The two root edges describe the same unrooted edge and are merged by
    summing their lengths.
    """
    everything = frozenset(tree.leaf_label.values())
    out: dict[frozenset, float] = {}
    for v in tree.preorder:
        if v == tree.root:
            continue
        side = _normalize(frozenset(tree.leaves_below(v)), everything)
        if not side:
            continue
        out[side] = out.get(side, 0.0) + tree.weight[v]
    return out


def splits(tree: Phylogeny) -> frozenset:
    """Nontrivial bipartitions of the unrooted tree."""
    n = tree.n
    return frozenset(s for s in split_lengths(tree) if 1 < len(s) < n - 1)


def unrooted_equal(t1: Phylogeny, t2: Phylogeny) -> bool:
    """Topological equality after removing the root (weights ignored)."""
    _check_same_leaves(t1, t2)
    if t1.n <= 3:
        return True
    return splits(t1) == splits(t2)


def robinson_foulds(t1: Phylogeny, t2: Phylogeny) -> int:
    _check_same_leaves(t1, t2)
    return len(splits(t1) ^ splits(t2))


# ---------------------------------------------------------------------------
# restricted subtrees


@dataclass(frozen=True, eq=False)
class RestrictedSubtree:
    """The host tree cut down to the paths among ``kept`` vertices.

    ``adj`` is the undirected contracted topology with path lengths taken
    from the host.  ``span_vertices``/``span_edges`` record the host
    vertices and host edges (by lower endpoint) the subtree covers before
    contraction.  ``root`` is set only when a root was designated.
    """

    host: Phylogeny
    kept: frozenset
    adj: Mapping[int, Mapping[int, float]]
    span_vertices: frozenset
    span_edges: frozenset
    root: int | None = None

    @property
    def vertices(self) -> frozenset:
        return frozenset(self.adj)

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        if len(self.adj) == 1:
            return tuple(self.adj)
        return tuple(sorted(v for v, nb in self.adj.items() if len(nb) == 1 and v != self.root))

    def leaf_labels(self) -> tuple[int, ...]:
        return tuple(sorted(self.host.leaf_label[v] for v in self.leaves if v in self.host.leaf_label))

    def edge_length(self, u: int, v: int) -> float:
        return self.adj[u][v]

    def children(self, v: int) -> tuple[int, ...]:
        """Neighbours of ``v`` pointing away from the designated root."""
        if self.root is None:
            raise InputError("restricted subtree has no designated root")
        return self._children[v]

    @cached_property
    def _children(self) -> dict[int, tuple[int, ...]]:
        out = {}
        stack = [(self.root, None)]
        while stack:
            v, par = stack.pop()
            cs = tuple(sorted(nb for nb in self.adj[v] if nb != par))
            out[v] = cs
            stack.extend((c, v) for c in cs)
        return out

    def distance(self, u: int, v: int) -> float:
        """Path length inside the restricted topology."""
        dist = {u: 0.0}
        queue = deque([u])
        while queue:
            x = queue.popleft()
            if x == v:
                return dist[x]
            for nb, w in self.adj[x].items():
                if nb not in dist:
                    dist[nb] = dist[x] + w
                    queue.append(nb)
        raise InputError(f"{v} not in restricted subtree")

    def is_legal(self) -> bool:
        """Rooted full binary: root of degree 2, others of degree 1 or 3.

        A single vertex counts as legal (the leaf case of the distorted
        metric routine).
        """
        if self.root is None:
            return False
        if len(self.adj) == 1:
            return True
        for v, nb in self.adj.items():
            deg = len(nb)
            if v == self.root:
                if deg != 2:
                    return False
            elif deg not in (1, 3):
                return False
        return True


def _span(tree: Phylogeny, keep: frozenset) -> tuple[set, set]:
    total = len(keep)
    below: dict[int, int] = {}
    for v in tree.postorder:
        below[v] = (v in keep) + sum(below[c] for c in tree.children[v])
    edges = {v for v in tree.preorder if v != tree.root and 0 < below[v] < total}
    verts = set()
    for v in edges:
        verts.add(v)
        verts.add(tree.parent[v])
    if not verts:
        verts = set(keep)
    return verts, edges


def restrict(tree: Phylogeny, keep: Iterable[int], root: int | None = None) -> RestrictedSubtree:
    """Subtree of ``tree`` spanned by the vertices ``keep``.

    Degree-2 vertices outside ``keep`` are contracted, with path lengths
    summed.  If ``root`` is given it is added to ``keep`` and becomes the
    designated root.
    """
    keep = set(keep)
    if root is not None:
        keep.add(root)
    if not keep:
        raise InputError("restrict needs a nonempty vertex set")
    for v in keep:
        if v not in tree.children:
            raise InputError(f"unknown vertex {v}")
    keep = frozenset(keep)
    verts, edges = _span(tree, keep)
    adj: dict[int, dict[int, float]] = {v: {} for v in verts}
    for c in edges:
        p = tree.parent[c]
        adj[p][c] = adj[c][p] = tree.weight[c]
    changed = True
    while changed:
        changed = False
        for v in list(adj):
            if v in keep or len(adj[v]) != 2:
                continue
            (a, wa), (b, wb) = adj[v].items()
            del adj[a][v], adj[b][v], adj[v]
            adj[a][b] = adj[b][a] = wa + wb
            changed = True
    return RestrictedSubtree(
        host=tree,
        kept=keep,
        adj=adj,
        span_vertices=frozenset(verts),
        span_edges=frozenset(edges),
        root=root,
    )


def clade_subtree(tree: Phylogeny, v: int) -> RestrictedSubtree:
    """The leaves below ``v`` restricted and rooted at ``v``."""
    leaves = [tree.label_vertex[a] for a in tree.leaves_below(v)]
    return restrict(tree, leaves, root=v)


@dataclass(frozen=True)
class SubtreePairClassification:
    edge_disjoint: bool
    dangling: bool
    w1: int | None = None
    w2: int | None = None


def _junction(tree: Phylogeny, span1: frozenset, span2: frozenset) -> tuple[int, int]:
    shared = span1 & span2
    if shared:
        v = min(shared)
        return v, v
    adj = tree.adjacency()
    src = {v: v for v in span1}
    queue = deque(sorted(span1))
    while queue:
        x = queue.popleft()
        for nb in adj[x]:
            if nb in src:
                continue
            src[nb] = src[x]
            if nb in span2:
                return src[nb], nb
            queue.append(nb)
    raise InputError("subtrees are not connected in host")  # unreachable for a tree


def classify_subtree_pair(tree: Phylogeny, T1: RestrictedSubtree, T2: RestrictedSubtree) -> SubtreePairClassification:
    """Edge-disjointness, danglingness and junction points of two rooted subtrees.

    The junction points ``w1, w2`` are where the shortest host path between
    the two subtrees leaves each of them.  The pair is dangling when some
    placement of the host root outside both subtrees sees each subtree hang
    from its own root with the connecting path above both; for edge-disjoint
    subtrees this is exactly ``w1 == x1``, ``w2 == x2`` and ``x1 != x2``.
    """
    for T in (T1, T2):
        if T.host is not tree:
            raise InputError("subtree belongs to a different host tree")
        if not T.is_legal():
            raise InputError("classify_subtree_pair needs legal rooted subtrees")
    disjoint = not (T1.span_edges & T2.span_edges)
    if not disjoint:
        return SubtreePairClassification(False, False)
    w1, w2 = _junction(tree, T1.span_vertices, T2.span_vertices)
    dangling = w1 == T1.root and w2 == T2.root and T1.root != T2.root
    return SubtreePairClassification(True, dangling, w1, w2)


# ---------------------------------------------------------------------------
# Newick


def _fmt(w: float) -> str:
    return repr(float(w))


def to_newick(tree: Phylogeny) -> str:
    """Canonical Newick: children sorted by their smallest leaf label."""

    def rec(v: int) -> str:
        cs = tree.children[v]
        if not cs:
            s = str(tree.leaf_label[v])
        else:
            ordered = sorted(cs, key=lambda c: tree.leaves_below(c)[0])
            s = "(" + ",".join(rec(c) for c in ordered) + ")"
        if v != tree.root:
            s += ":" + _fmt(tree.weight[v])
        return s

    return rec(tree.root) + ";"


class _NewickReader:
    def __init__(self, text: str):
        self.s = "".join(text.split())
        self.i = 0
        self.next_id = 0
        self.children: dict[int, list[int]] = {}
        self.weight: dict[int, float] = {}
        self.labels: dict[int, int] = {}

    def peek(self) -> str:
        return self.s[self.i] if self.i < len(self.s) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            raise InputError(f"newick: expected {ch!r} at position {self.i}")
        self.i += 1

    def token(self) -> str:
        start = self.i
        while self.i < len(self.s) and self.s[self.i] not in "(),:;":
            self.i += 1
        return self.s[start:self.i]

    def node(self) -> int:
        v = self.next_id
        self.next_id += 1
        self.children[v] = []
        if self.peek() == "(":
            self.i += 1
            self.children[v].append(self.node())
            while self.peek() == ",":
                self.i += 1
                self.children[v].append(self.node())
            self.expect(")")
            self.token()  # internal names / support values are ignored
        else:
            name = self.token()
            try:
                self.labels[v] = int(name)
            except ValueError:
                raise InputError(f"newick: leaf label {name!r} is not an integer") from None
        if self.peek() == ":":
            self.i += 1
            tok = self.token()
            try:
                self.weight[v] = float(tok)
            except ValueError:
                raise InputError(f"newick: bad branch length {tok!r}") from None
        return v


def parse_newick(text: str, allow_zero: bool = False) -> Phylogeny:
    r = _NewickReader(text)
    root = r.node()
    r.expect(";")
    if r.peek():
        raise InputError("newick: trailing characters")
    edges = []
    for p, cs in r.children.items():
        for c in cs:
            if c not in r.weight:
                raise InputError("newick: every non-root node needs a branch length")
            edges.append((p, c, r.weight[c]))
    if not edges:
        return Phylogeny(children={root: ()}, weight={}, root=root, leaf_label=r.labels)
    return Phylogeny.from_edges(edges, r.labels, root=root, allow_zero=allow_zero)
