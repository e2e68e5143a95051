"""Leaf-pair correlation tables and distance estimators."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, UnsupportedError
from .simulate import Alignment

MATRIX_HEADER = "# deepdist-distances v1"


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Empirical joint state frequencies of two leaves over ``k`` sites."""

    F_hat: np.ndarray
    k: int

    @property
    def phi(self) -> int:
        return self.F_hat.shape[0]


def correlation_matrix(seq_a, seq_b, phi: int | None = None) -> CorrelationMatrix:
    a = np.asarray(seq_a, dtype=np.int64)
    b = np.asarray(seq_b, dtype=np.int64)
    if a.ndim != 1 or a.shape != b.shape:
        raise InputError("sequences must be one-dimensional and of equal length")
    k = a.shape[0]
    if k < 1:
        raise InputError("sequences must be nonempty")
    if phi is None:
        phi = int(max(a.max(), b.max())) + 1
    if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= phi:
        raise InputError("state index out of range")
    counts = np.bincount(a * phi + b, minlength=phi * phi).reshape(phi, phi)
    return CorrelationMatrix(F_hat=counts / k, k=k)


def _as_table(F) -> np.ndarray:
    return F.F_hat if isinstance(F, CorrelationMatrix) else np.asarray(F, dtype=float)


def _neg_log(x: float) -> float:
    return -math.log(x) if x > 0 else math.inf


def tau_hat(F, nu) -> float:
    """``-ln(nu^T F nu)``, or infinity when the quadratic form is not positive."""
    table = _as_table(F)
    nu = np.asarray(nu, dtype=float)
    if table.shape != (len(nu), len(nu)):
        raise InputError("table and eigenvector dimensions differ")
    return _neg_log(float(nu @ table @ nu))


def baseline_metrics(F) -> dict[str, float]:
    """CFN and log-det distances; the CFN one needs two states."""
    table = _as_table(F)
    if table.shape[0] != 2:
        raise UnsupportedError("the CFN distance is defined for two states only")
    return {"cfn": cfn_distance(table), "logdet": logdet_distance(table)}


def cfn_distance(F) -> float:
    table = _as_table(F)
    if table.shape != (2, 2):
        raise UnsupportedError("the CFN distance is defined for two states only")
    return _neg_log(1.0 - 2.0 * (table[0, 1] + table[1, 0]))


def logdet_distance(F) -> float:
    return _neg_log(abs(float(np.linalg.det(_as_table(F)))))


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric matrix of estimated leaf distances; ``inf`` marks far pairs."""

    tau_hat: np.ndarray

    def __post_init__(self):
        t = self.tau_hat
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise InputError("distance matrix must be square")
        if np.any(np.isnan(t)):
            raise InputError("distance matrix contains NaN")
        if not np.array_equal(t, t.T):
            raise InputError("distance matrix must be symmetric")

    @property
    def n(self) -> int:
        return self.tau_hat.shape[0]

    def __getitem__(self, ab) -> float:
        return float(self.tau_hat[ab])

    def permuted(self, perm) -> "DistanceMatrix":
        """Relabel leaf ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return DistanceMatrix(self.tau_hat[np.ix_(inv, inv)])

    def __eq__(self, other):
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return np.array_equal(self.tau_hat, other.tau_hat)


def _indicator_blocks(aln: Alignment) -> np.ndarray:
    # one-hot encoding: (n, phi, k)
    states = aln.leaf_states
    return (states[:, None, :] == np.arange(aln.phi)[None, :, None]).astype(np.float64)


def all_pairs_distances(aln: Alignment, nu, estimator: str = "eigenvector") -> DistanceMatrix:
    """Estimated distances between every pair of leaves.

    ``estimator`` is ``eigenvector`` (the default), ``cfn`` or ``logdet``.
    The eigenvector estimator uses ``sigma = nu[state]`` so the whole matrix
    is one product ``Sigma Sigma^T / k``.
    """
    if aln.n < 1 or aln.k < 1:
        raise InputError("empty alignment")
    k = aln.k
    if estimator == "eigenvector":
        nu = np.asarray(nu, dtype=float)
        if len(nu) != aln.phi:
            raise InputError("eigenvector length does not match the alignment")
        sigma = nu[aln.leaf_states]
        E = sigma @ sigma.T / k
        E = 0.5 * (E + E.T)
        with np.errstate(divide="ignore"):
            T = np.where(E > 0, -np.log(np.where(E > 0, E, 1.0)), np.inf)
        return DistanceMatrix(T)
    if estimator == "cfn":
        if aln.phi != 2:
            raise UnsupportedError("the CFN distance is defined for two states only")
        s = aln.leaf_states.astype(np.float64)
        mismatch = (s @ (1 - s).T + (1 - s) @ s.T) / k
        x = 1.0 - 2.0 * mismatch
        x = 0.5 * (x + x.T)
        with np.errstate(divide="ignore"):
            T = np.where(x > 0, -np.log(np.where(x > 0, x, 1.0)), np.inf)
        return DistanceMatrix(T)
    if estimator == "logdet":
        onehot = _indicator_blocks(aln)
        n = aln.n
        T = np.zeros((n, n))
        for a in range(n):
            for b in range(a, n):
                F = onehot[a] @ onehot[b].T / k
                T[a, b] = T[b, a] = logdet_distance(F)
        return DistanceMatrix(T)
    raise InputError(f"unknown estimator {estimator!r}")


def exact_distance_matrix(tree) -> DistanceMatrix:
    """The true tree metric on the leaves, as an infinite-data distance matrix."""
    return DistanceMatrix(np.array(tree.tree_metric().d, dtype=float))


def exact_correlation(model, t: float) -> np.ndarray:
    """Two-point table ``diag(pi) exp(tQ)`` of leaves at distance ``t``."""
    return model.pi[:, None] * model.transition_matrix(t)


# ---------------------------------------------------------------------------
# CSV


def write_distance_csv(dm: DistanceMatrix) -> str:
    buf = io.StringIO()
    buf.write(MATRIX_HEADER + "\n")
    n = dm.n
    buf.write("label," + ",".join(str(i) for i in range(n)) + "\n")
    for i in range(n):
        buf.write(str(i) + "," + ",".join("inf" if math.isinf(x) else repr(float(x)) for x in dm.tau_hat[i]) + "\n")
    return buf.getvalue()


def read_distance_csv(text: str) -> DistanceMatrix:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != MATRIX_HEADER:
        raise InputError("missing or unsupported distance matrix header")
    header = lines[1].split(",")
    labels = [int(x) for x in header[1:]]
    n = len(labels)
    if labels != list(range(n)):
        raise InputError("column labels must be 0..n-1")
    rows = lines[2:]
    if len(rows) != n:
        raise InputError(f"expected {n} rows, found {len(rows)}")
    T = np.empty((n, n))
    for i, row in enumerate(rows):
        cells = row.split(",")
        if int(cells[0]) != i or len(cells) != n + 1:
            raise InputError(f"malformed row {i}")
        try:
            T[i] = [float(c) for c in cells[1:]]
        except ValueError as e:
            raise InputError(f"bad number in row {i}: {e}") from None
    return DistanceMatrix(T)
