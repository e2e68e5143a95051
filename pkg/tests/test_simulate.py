import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import balanced, random_tree
from deepdist.errors import InputError
from deepdist.gtr import binary_asymmetric, cfn, jukes_cantor_like
from deepdist.simulate import (
    Alignment,
    read_alignment,
    read_fasta,
    sample_alignment,
    sample_site,
    write_alignment,
    write_fasta,
)
from deepdist.tree import Phylogeny


def test_same_seed_same_alignment():
    t = balanced(3, 0)
    a = sample_alignment(t, cfn(), 500, 42)
    b = sample_alignment(t, cfn(), 500, np.random.SeedSequence(42))
    c = sample_alignment(t, cfn(), 500, 43)
    assert a == b
    assert a != c


def test_prefix_stability():
    t = random_tree(9, 3)
    m = jukes_cantor_like(4)
    short = sample_alignment(t, m, 100, 7)
    long = sample_alignment(t, m, 1000, 7)
    assert np.array_equal(long.leaf_states[:, :100], short.leaf_states)


def test_site_matches_first_column():
    t = random_tree(7, 1)
    m = binary_asymmetric(0.7)
    site = sample_site(t, m, 5)
    aln = sample_alignment(t, m, 10, 5, keep_internal=True)
    for v, s in site.states.items():
        assert aln.internal_states[v][0] == s
    for v, lab in t.leaf_label.items():
        assert aln.leaf_states[lab, 0] == site.states[v]
    sig = site.sigma(m)
    assert set(np.round(list(sig.values()), 12)) <= set(np.round(m.nu, 12))


def test_zero_length_edges_copy_the_parent():
    t = Phylogeny.from_edges([(0, 1, 0.0), (0, 2, 0.3)], {1: 0, 2: 1}, allow_zero=True)
    aln = sample_alignment(t, cfn(), 2000, 0, keep_internal=True)
    assert np.array_equal(aln.leaf_states[0], aln.internal_states[0])


@pytest.mark.parametrize("model", [cfn(), binary_asymmetric(0.8), jukes_cantor_like(4)])
def test_leaf_marginals_are_stationary(model):
    t = balanced(2, 5)
    k = 40_000
    aln = sample_alignment(t, model, k, 11)
    for row in aln.leaf_states:
        freq = np.bincount(row, minlength=model.phi) / k
        sd = np.sqrt(model.pi * (1 - model.pi) / k)
        assert np.all(np.abs(freq - model.pi) < 5 * sd)


@given(st.floats(0.05, 1.5), st.integers(0, 2**32 - 1))
def test_pair_agreement_rate(t, seed):
    tree = Phylogeny.from_edges([(0, 1, t / 2), (0, 2, t / 2)], {1: 0, 2: 1})
    k = 20_000
    aln = sample_alignment(tree, cfn(), k, seed)
    agree = np.mean(aln.leaf_states[0] == aln.leaf_states[1])
    p = (1 + math.exp(-t)) / 2
    assert abs(agree - p) < 5 * math.sqrt(p * (1 - p) / k)


def test_joint_table_of_asymmetric_pair():
    m = binary_asymmetric(0.8)
    t = 0.4
    tree = Phylogeny.from_edges([(0, 1, 0.1), (0, 2, t - 0.1)], {1: 0, 2: 1})
    k = 100_000
    aln = sample_alignment(tree, m, k, 2)
    F = np.zeros((2, 2))
    np.add.at(F, (aln.leaf_states[0], aln.leaf_states[1]), 1.0 / k)
    expected = m.pi[:, None] * m.transition_matrix(t)
    assert np.allclose(F, expected, atol=5 * math.sqrt(0.25 / k))


def test_bad_lengths():
    t = balanced(2, 0)
    for k in (0, -3, 2.5):
        with pytest.raises(InputError):
            sample_alignment(t, cfn(), k, 0)
    with pytest.raises(InputError):
        sample_alignment(t, cfn(), 10, "seed")


def test_text_round_trip():
    t = random_tree(6, 4)
    aln = sample_alignment(t, jukes_cantor_like(4), 50, 1)
    text = write_alignment(aln)
    assert text.startswith("# deepdist-alignment v1\n6 50 4\n")
    assert read_alignment(text) == aln


@pytest.mark.parametrize("model", [cfn(), jukes_cantor_like(4), jukes_cantor_like(3)])
def test_fasta_round_trip(model):
    aln = sample_alignment(balanced(2, 1), model, 30, 3)
    assert read_fasta(write_fasta(aln), model.phi) == aln


def test_read_errors():
    with pytest.raises(InputError):
        read_alignment("2 1 2\n0 1\n")
    with pytest.raises(InputError):
        read_alignment("# deepdist-alignment v9\n2 1 2\n0 1\n")
    with pytest.raises(InputError):
        read_alignment("# deepdist-alignment v1\n2 2 2\n0 1\n")
    with pytest.raises(InputError):
        read_alignment("# deepdist-alignment v1\n2 1 2\n0 2\n")
    with pytest.raises(InputError):
        read_fasta(">0\n+-\n>1\n+x\n", 2)


def test_alignment_shape():
    a = Alignment(np.zeros((3, 4), dtype=np.int8), 2)
    assert (a.n, a.k) == (3, 4)
