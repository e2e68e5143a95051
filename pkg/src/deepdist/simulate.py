"""Sampling i.i.d. sites from a GTR Markov model on a phylogeny.

Random streams: every vertex gets its own Philox generator keyed by
``(seed, preorder index of the vertex)``; site ``i`` at that vertex uses the
``i``-th uniform drawn from the stream.  A column of sites therefore does
not depend on how many other sites are drawn, and blocks of sites can be
generated independently and concatenated.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InputError
from .gtr import RateMatrix, transition_matrix
from .tree import Phylogeny

ALIGNMENT_HEADER = "# deepdist-alignment v1"


@dataclass(frozen=True, eq=False)
class SiteSample:
    states: Mapping[int, int]

    def sigma(self, model: RateMatrix) -> dict[int, float]:
        return {v: float(model.nu[s]) for v, s in self.states.items()}


@dataclass(frozen=True, eq=False)
class Alignment:
    """Leaf states as an ``n x k`` integer matrix, rows indexed by leaf label."""

    leaf_states: np.ndarray
    phi: int
    internal_states: Mapping[int, np.ndarray] | None = None

    @property
    def n(self) -> int:
        return self.leaf_states.shape[0]

    @property
    def k(self) -> int:
        return self.leaf_states.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Alignment):
            return NotImplemented
        return self.phi == other.phi and np.array_equal(self.leaf_states, other.leaf_states)


def _seed_sequence(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, (int, np.integer)):
        return np.random.SeedSequence(int(rng))
    raise InputError("rng must be an integer seed or a numpy SeedSequence")


def vertex_stream(seed, index: int) -> np.random.Generator:
    ss = _seed_sequence(seed)
    child = np.random.SeedSequence(entropy=ss.entropy, spawn_key=tuple(ss.spawn_key) + (index,))
    return np.random.Generator(np.random.Philox(child))


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    out = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(out, cum.shape[-1] - 1)


def _simulate(tree: Phylogeny, model: RateMatrix, k: int, rng) -> dict[int, np.ndarray]:
    ss = _seed_sequence(rng)
    dtype = np.int8 if model.phi < 128 else np.int32
    states: dict[int, np.ndarray] = {}
    cum_pi = np.cumsum(model.pi)
    cache: dict[float, np.ndarray] = {}
    for idx, v in enumerate(tree.preorder):
        if v == tree.root:
            u = vertex_stream(ss, idx).random(k)
            states[v] = _draw(cum_pi[None, :], u).astype(dtype)
            continue
        parent_states = states[tree.parent[v]]
        w = tree.weight[v]
        if w == 0:
            states[v] = parent_states.copy()
            continue
        cum = cache.get(w)
        if cum is None:
            cum = cache[w] = np.cumsum(transition_matrix(model, w), axis=1)
        u = vertex_stream(ss, idx).random(k)
        states[v] = np.minimum((u[:, None] >= cum[parent_states]).sum(axis=1), model.phi - 1).astype(dtype)
    return states


def sample_site(tree: Phylogeny, model: RateMatrix, rng) -> SiteSample:
    """One full state assignment, drawn from the root toward the leaves."""
    states = _simulate(tree, model, 1, rng)
    return SiteSample({v: int(s[0]) for v, s in states.items()})


def sample_alignment(tree: Phylogeny, model: RateMatrix, k: int, rng, keep_internal: bool = False) -> Alignment:
    """``k`` independent sites; internal states kept only on request."""
    if int(k) != k or k < 1:
        raise InputError("sequence length must be a positive integer")
    states = _simulate(tree, model, int(k), rng)
    n = tree.n
    leaf = np.empty((n, int(k)), dtype=next(iter(states.values())).dtype)
    for v, lab in tree.leaf_label.items():
        leaf[lab] = states[v]
    internal = None
    if keep_internal:
        internal = {v: s for v, s in states.items()}
    return Alignment(leaf_states=leaf, phi=model.phi, internal_states=internal)


# ---------------------------------------------------------------------------
# file formats


def write_alignment(aln: Alignment) -> str:
    """Text format: header line, ``n k phi``, then one line per site."""
    lines = [ALIGNMENT_HEADER, f"{aln.n} {aln.k} {aln.phi}"]
    for col in aln.leaf_states.T:
        lines.append(" ".join(map(str, col.tolist())))
    return "\n".join(lines) + "\n"


def read_alignment(text: str) -> Alignment:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# deepdist-alignment"):
        raise InputError("missing alignment header")
    if lines[0].strip() != ALIGNMENT_HEADER:
        raise InputError(f"unsupported alignment version: {lines[0]!r}")
    try:
        n, k, phi = map(int, lines[1].split())
        data = np.array([list(map(int, ln.split())) for ln in lines[2:]], dtype=np.int64)
    except ValueError as e:
        raise InputError(f"malformed alignment: {e}") from None
    if data.shape != (k, n):
        raise InputError(f"alignment body has shape {data.shape}, header says {(k, n)}")
    if data.size and (data.min() < 0 or data.max() >= phi):
        raise InputError("state index out of range")
    dtype = np.int8 if phi < 128 else np.int32
    return Alignment(leaf_states=data.T.astype(dtype).copy(), phi=phi)


def _alphabet(phi: int) -> str:
    if phi == 4:
        return "ACGT"
    if phi == 2:
        return "+-"
    chars = "0123456789abcdefghijklmnopqrstuvwxyz"
    if phi > len(chars):
        raise InputError("too many states for FASTA export")
    return chars[:phi]


def write_fasta(aln: Alignment) -> str:
    alpha = np.array(list(_alphabet(aln.phi)))
    out = []
    for lab, row in enumerate(aln.leaf_states):
        out.append(f">{lab}")
        out.append("".join(alpha[row]))
    return "\n".join(out) + "\n"


def read_fasta(text: str, phi: int) -> Alignment:
    lookup = {c: i for i, c in enumerate(_alphabet(phi))}
    seqs: dict[int, str] = {}
    cur = None
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln:
            continue
        if ln.startswith(">"):
            cur = int(ln[1:].split()[0])
            seqs[cur] = ""
        elif cur is None:
            raise InputError("FASTA body before first header")
        else:
            seqs[cur] += ln
    if sorted(seqs) != list(range(len(seqs))):
        raise InputError("FASTA labels must be 0..n-1")
    try:
        rows = [[lookup[c] for c in seqs[i]] for i in range(len(seqs))]
    except KeyError as e:
        raise InputError(f"unknown character {e.args[0]!r}") from None
    if len({len(r) for r in rows}) != 1:
        raise InputError("sequences have different lengths")
    return Alignment(leaf_states=np.array(rows, dtype=np.int8 if phi < 128 else np.int32), phi=phi)
