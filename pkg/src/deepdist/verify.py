"""Fast built-in oracle checks, run by the ``verify`` command and endpoint."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .deep import (
    DeepConfig,
    WeightTable,
    dense_ball_select,
    diameter_test,
    exponential_average,
    flow_estimator,
    homogeneous_flow,
    variance_bound,
)
from .distances import DistanceMatrix, baseline_metrics, exact_correlation, tau_hat
from .gtr import binary_asymmetric, build_gtr, cfn, jukes_cantor_like
from .harness import homogeneous_tree
from .reconstruct import reconstruct_homogeneous
from .tree import path_length, split_lengths, unrooted_equal


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


def _spectrum() -> str:
    rng = np.random.default_rng(0)
    worst = 0.0
    for phi in (2, 3, 4):
        for _ in range(10):
            pi = rng.dirichlet(np.ones(phi))
            S = rng.uniform(0.1, 2.0, (phi, phi))
            S = S + S.T
            Q = S * pi[None, :]
            np.fill_diagonal(Q, 0.0)
            np.fill_diagonal(Q, -Q.sum(axis=1))
            m = build_gtr(Q, pi)
            worst = max(
                worst,
                abs(m.eigenvalues[1] + 1),
                abs(float(m.pi @ m.nu)),
                abs(float(m.pi @ m.nu**2) - 1),
            )
    assert worst < 1e-12, worst
    return f"max residual {worst:.1e}"


def _presets() -> str:
    assert np.allclose(cfn().nu, [1, -1], atol=1e-12)
    assert np.allclose(binary_asymmetric(0.8).nu, [0.5, -2], atol=1e-12)
    jc = jukes_cantor_like(4)
    assert abs(jc.eigenvalues[1] + 1) < 1e-12
    M = cfn().transition_matrix(math.log(2))
    assert np.allclose(M, [[0.75, 0.25], [0.25, 0.75]], atol=1e-12)
    return "cfn, binary asymmetric, 4-state"


def _estimators() -> str:
    F = exact_correlation(cfn(), math.log(2))
    t = tau_hat(F, cfn().nu)
    b = baseline_metrics(F)
    assert abs(t - math.log(2)) < 1e-12
    assert abs(b["cfn"] - math.log(2)) < 1e-12
    assert abs(b["logdet"] - 3 * math.log(2)) < 1e-12
    return "exact tables"


def _flow() -> str:
    worst = 0.0
    for h in range(1, 13):
        tree = homogeneous_tree(h, [0.3] * (2 ** (h + 1) - 2))
        sig = {a: 0.0 for a in range(tree.n)}
        res = flow_estimator(tree, cfn(), None, homogeneous_flow(tree), sig)
        assert abs(res.K_psi - res.K_closed_form) < 1e-12
        assert res.K_psi <= variance_bound(0.3)
        worst = max(worst, res.K_psi)
    return f"max K {worst:.4f} <= bound {variance_bound(0.3):.4f}"


def _telescoping() -> str:
    h = 4
    tree = homogeneous_tree(h, [0.25] * (2 ** (h + 1) - 2))
    T = np.array(tree.tree_metric().d)
    wt = WeightTable.from_phylogeny(tree)
    worst = 0.0
    for lv in range(1, h):
        verts = [v for v in tree.preorder if tree.level[v] == h - lv]
        for a0, b0 in itertools.combinations(verts, 2):
            est = exponential_average(tree.leaves_below(a0), tree.leaves_below(b0), T, wt, a0, b0)
            worst = max(worst, abs(est - path_length(tree, a0, b0)))
    assert worst < 1e-12, worst
    return f"max error {worst:.1e}"


def _dense_ball() -> str:
    assert dense_ball_select([1.0, 1.0, 1.0, 10.0])[0] == 1.0
    assert diameter_test([1, 1, 1, 10], 1.0, 6.0) == 1
    assert diameter_test([math.inf] * 4, 1.0, 6.0) == 0
    return "examples"


def _noiseless() -> str:
    rng = np.random.default_rng(1)
    for h in (2, 3, 4):
        w = rng.choice([0.1, 0.15, 0.2, 0.25, 0.3], size=2 ** (h + 1) - 2)
        tree = homogeneous_tree(h, w.tolist())
        dm = DistanceMatrix(np.array(tree.tree_metric().d))
        out = reconstruct_homogeneous(dm, cfg=DeepConfig(Delta=0.05, f=0.1, g=0.3))
        assert unrooted_equal(out, tree)
        a, b = split_lengths(out), split_lengths(tree)
        assert max(abs(a[s] - b[s]) for s in b) < 1e-9
    return "h = 2, 3, 4"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("spectrum normalization", _spectrum),
    ("preset models", _presets),
    ("distance estimators", _estimators),
    ("flow recursion and bound", _flow),
    ("telescoping average", _telescoping),
    ("dense ball and diameter test", _dense_ball),
    ("noiseless reconstruction", _noiseless),
]


def run_checks() -> list[Check]:
    out = []
    for name, fn in CHECKS:
        try:
            out.append(Check(name, True, fn()))
        except Exception as e:  # report, keep going
            out.append(Check(name, False, f"{type(e).__name__}: {e}"))
    return out
