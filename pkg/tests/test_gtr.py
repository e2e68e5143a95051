import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from deepdist.errors import ConfigError, InputError, ValidationError
from deepdist.gtr import (
    binary_asymmetric,
    build_gtr,
    cfn,
    jukes_cantor_like,
    model_from_config,
    model_to_config,
    preset_models,
)


def random_reversible(phi, seed):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(phi)) * 0.9 + 0.1 / phi
    S = rng.uniform(0.1, 3.0, (phi, phi))
    S = S + S.T
    Q = S * pi[None, :]
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q, pi


models = st.tuples(st.integers(2, 6), st.integers(0, 2**32 - 1))


@given(models)
def test_normalized_spectrum(args):
    m = build_gtr(*random_reversible(*args))
    assert m.eigenvalues[0] == pytest.approx(0.0, abs=1e-12)
    assert abs(m.eigenvalues[1] + 1) < 1e-12
    assert np.all(np.diff(m.eigenvalues) <= 1e-12)
    assert abs(m.pi @ m.nu) < 1e-12
    assert abs(m.pi @ m.nu**2 - 1) < 1e-12
    assert np.allclose(m.Q @ m.nu, -m.nu, atol=1e-10)
    flux = m.pi[:, None] * m.Q
    assert np.max(np.abs(flux - flux.T)) < 1e-12
    assert np.allclose(m.Q.sum(axis=1), 0, atol=1e-12)


@given(models, st.floats(0.0, 5.0))
def test_transition_matrix_matches_expm(args, t):
    m = build_gtr(*random_reversible(*args))
    M = m.transition_matrix(t)
    assert np.allclose(M, expm(t * m.Q), atol=1e-10)
    assert np.allclose(M.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(m.pi @ M, m.pi, atol=1e-12)
    # the eigenvector decays at rate exp(-t)
    assert np.allclose(M @ m.nu, math.exp(-t) * m.nu, atol=1e-10)


@given(models, st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_semigroup(args, s, t):
    m = build_gtr(*random_reversible(*args))
    assert np.allclose(m.transition_matrix(s) @ m.transition_matrix(t), m.transition_matrix(s + t), atol=1e-10)


def test_scaling_is_a_time_change():
    Q, pi = random_reversible(4, 3)
    a, b = build_gtr(Q, pi), build_gtr(7.5 * Q, pi)
    assert np.allclose(a.Q, b.Q, atol=1e-12)
    assert np.allclose(a.nu, b.nu, atol=1e-12)


def test_cfn_preset():
    m = cfn()
    assert np.allclose(m.nu, [1.0, -1.0])
    assert np.allclose(m.Q, [[-0.5, 0.5], [0.5, -0.5]])
    # flip probability (1 - exp(-t)) / 2
    t = 0.3
    assert m.transition_matrix(t)[0, 1] == pytest.approx((1 - math.exp(-t)) / 2, abs=1e-14)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.8, 0.95])
def test_binary_asymmetric_eigenvector(p):
    m = binary_asymmetric(p)
    q = 1 - p
    assert np.allclose(m.nu, [math.sqrt(q / p), -math.sqrt(p / q)], atol=1e-12)
    assert np.allclose(m.pi, [p, q])


def test_degenerate_eigenspace_is_deterministic():
    m = jukes_cantor_like(4)
    assert np.allclose(m.eigenvalues[1:], -1.0)
    # projection of e_0 onto the -1 eigenspace, pi-normalized
    expected = np.array([3.0, -1.0, -1.0, -1.0]) / math.sqrt(3.0)
    assert np.allclose(m.nu, expected, atol=1e-12)
    assert np.array_equal(m.nu, jukes_cantor_like(4).nu)


def test_validation_errors():
    with pytest.raises(ValidationError):
        build_gtr([[-1, 1], [1, -1]], [0.6, 0.6])
    with pytest.raises(ValidationError):
        build_gtr([[-1, 1], [2, -2]], [0.5, 0.5])  # not reversible
    with pytest.raises(ValidationError):
        build_gtr([[-1, 1], [1, -0.5]], [0.5, 0.5])  # rows do not sum to zero
    with pytest.raises(ValidationError):
        build_gtr([[0.0]], [1.0])
    with pytest.raises(ValidationError):
        build_gtr([[-1, 1, 0], [1, -1, 0], [0, 0, 0]], [1 / 3] * 3)
    with pytest.raises(ValidationError):
        binary_asymmetric(1.2)
    with pytest.raises(ValidationError):
        preset_models("nope")
    with pytest.raises(InputError):
        cfn().transition_matrix(-1)


def test_presets_by_name():
    assert np.allclose(preset_models("cfn").nu, cfn().nu)
    assert np.allclose(preset_models("binary-asymmetric", 0.7).pi, [0.7, 0.3])
    assert preset_models("jc", 3).phi == 3


def test_model_config_round_trip():
    Q, pi = random_reversible(4, 9)
    m = build_gtr(Q, pi)
    back = model_from_config(model_to_config(m))
    assert np.allclose(back.Q, m.Q, atol=1e-14)
    assert np.allclose(back.nu, m.nu, atol=1e-12)
    assert np.allclose(model_from_config("preset = binary_asymmetric 0.8").nu, [0.5, -2.0])
    with pytest.raises(ConfigError):
        model_from_config("phi = 2\npi = 0.5 0.5\n")
    with pytest.raises(ConfigError):
        model_from_config("phi = 2\npi = 0.5 x\nq0 = -1 1\nq1 = 1 -1\n")
