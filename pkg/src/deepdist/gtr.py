"""Reversible rate matrices, their spectra and transition matrices."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, InputError, ValidationError

VALIDATION_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """A GTR generator normalized so its second eigenvalue is -1.

    ``eigenvalues`` are sorted descending (``eigenvalues[0] == 0``) and
    ``nu`` is the right eigenvector for -1, scaled so that
    ``sum(pi * nu) == 0`` and ``sum(pi * nu**2) == 1``.
    """

    Q: np.ndarray
    pi: np.ndarray
    eigenvalues: np.ndarray
    nu: np.ndarray
    # right eigenvectors of Q (columns), pi-orthonormal, ordered like eigenvalues
    _right: np.ndarray = field(repr=False)

    @property
    def phi(self) -> int:
        return len(self.pi)

    @property
    def pi_min(self) -> float:
        return float(self.pi.min())

    @property
    def nu_max(self) -> float:
        return float(np.abs(self.nu).max())

    @cached_property
    def _left(self) -> np.ndarray:
        # rows are left eigenvectors: diag(pi) @ right, transposed
        return (self._right * self.pi[:, None]).T

    def transition_matrix(self, t: float) -> np.ndarray:
        return transition_matrix(self, t)


def _symmetrized(Q: np.ndarray, pi: np.ndarray) -> np.ndarray:
    s = np.sqrt(pi)
    S = (s[:, None] * Q) / s[None, :]
    return 0.5 * (S + S.T)


def _second_eigenvector(U: np.ndarray, vals: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Pick a deterministic representative of the -1 eigenspace.

    ``U`` holds orthonormal eigenvectors of the symmetrized matrix.  The
    choice is the pi-orthogonal projection of the first coordinate vector
    that has a nonzero projection, which does not depend on the basis the
    eigensolver returned.
    """
    target = vals[1]
    mask = np.abs(vals - target) <= 1e-9 * max(1.0, abs(target))
    mask[0] = False
    B = U[:, mask]
    sq = np.sqrt(pi)
    if B.shape[1] == 1:
        u = B[:, 0]
    else:
        P = B @ B.T
        u = None
        for i in range(len(pi)):
            cand = P[:, i] * sq[i]
            if np.linalg.norm(cand) > 1e-8:
                u = cand
                break
        assert u is not None
        u = u / np.linalg.norm(u)
    nu = u / sq
    nz = np.flatnonzero(np.abs(nu) > 1e-12)
    if nu[nz[0]] < 0:
        nu = -nu
    return nu


def build_gtr(raw_Q, pi) -> RateMatrix:
    """Validate a reversible rate matrix and normalize it.

    The spectrum is computed from the symmetric matrix
    ``D^{1/2} Q D^{-1/2}`` (``D = diag(pi)``), which is exact for reversible
    chains and yields a real spectrum with pi-orthonormal eigenvectors.
    """
    Q = np.array(raw_Q, dtype=float)
    pi = np.array(pi, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] != pi.shape[0]:
        raise ValidationError("Q must be square and match pi")
    phi = len(pi)
    if phi < 2:
        raise ValidationError("need at least two states")
    if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(pi)):
        raise ValidationError("non-finite entries")
    if np.any(pi <= 0):
        raise ValidationError("stationary distribution must be strictly positive")
    if abs(pi.sum() - 1.0) > VALIDATION_TOL:
        raise ValidationError("pi must sum to 1")
    off = ~np.eye(phi, dtype=bool)
    if np.any(Q[off] <= 0):
        raise ValidationError("off-diagonal rates must be positive")
    if np.max(np.abs(Q.sum(axis=1))) > VALIDATION_TOL * max(1.0, np.abs(Q).max()):
        raise ValidationError("rows of Q must sum to zero")
    flux = pi[:, None] * Q
    if np.max(np.abs(flux - flux.T)) >= VALIDATION_TOL * max(1.0, np.abs(flux).max()):
        raise ValidationError("Q is not reversible with respect to pi")
    pi = pi / pi.sum()

    vals, U = np.linalg.eigh(_symmetrized(Q, pi))
    order = np.argsort(vals)[::-1]
    vals, U = vals[order], U[:, order]
    lam2 = vals[1]
    if lam2 >= -VALIDATION_TOL:
        raise ValidationError("second eigenvalue is zero: the chain is reducible")

    scale = -1.0 / lam2
    # rebuild Q from the symmetric flux so detailed balance holds to rounding
    sym_flux = 0.5 * (flux + flux.T) * scale
    Qn = sym_flux / pi[:, None]
    np.fill_diagonal(Qn, 0.0)
    np.fill_diagonal(Qn, -Qn.sum(axis=1))

    vals, U = np.linalg.eigh(_symmetrized(Qn, pi))
    order = np.argsort(vals)[::-1]
    vals, U = vals[order], U[:, order]
    nu = _second_eigenvector(U, vals, pi)
    # exp(tQ) depends only on the spectral projectors, so the solver's basis is kept
    right = U / np.sqrt(pi)[:, None]
    return RateMatrix(Q=Qn, pi=pi, eigenvalues=vals, nu=nu, _right=right)


def transition_matrix(model: RateMatrix, t: float) -> np.ndarray:
    """``exp(t Q)`` assembled from the eigendecomposition."""
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise InputError("transition time must be finite and nonnegative")
    if t == 0:
        return np.eye(model.phi)
    M = (model._right * np.exp(t * model.eigenvalues)[None, :]) @ model._left
    return np.clip(M, 0.0, None)


# ---------------------------------------------------------------------------
# presets


def cfn() -> RateMatrix:
    return build_gtr([[-0.5, 0.5], [0.5, -0.5]], [0.5, 0.5])


def binary_asymmetric(pi_plus: float, pi_minus: float | None = None) -> RateMatrix:
    if pi_minus is None:
        pi_minus = 1.0 - pi_plus
    if pi_plus <= 0 or pi_minus <= 0:
        raise ValidationError("binary asymmetric channel needs positive pi")
    total = pi_plus + pi_minus
    if abs(total - 1.0) > VALIDATION_TOL:
        raise ValidationError("pi must sum to 1")
    return build_gtr([[-pi_minus, pi_minus], [pi_plus, -pi_plus]], [pi_plus, pi_minus])


def jukes_cantor_like(phi: int = 4) -> RateMatrix:
    phi = int(phi)
    if phi < 2:
        raise ValidationError("need at least two states")
    Q = np.full((phi, phi), 1.0)
    np.fill_diagonal(Q, -(phi - 1.0))
    return build_gtr(Q, np.full(phi, 1.0 / phi))


def preset_models(name: str, *params: float) -> RateMatrix:
    """Look up a named model: ``cfn``, ``binary_asymmetric`` or ``jukes_cantor_like``."""
    key = name.lower().replace("-", "_")
    if key == "cfn":
        return cfn()
    if key in ("binary_asymmetric", "bac"):
        if not params:
            raise ValidationError("binary_asymmetric needs pi_plus")
        return binary_asymmetric(*params)
    if key in ("jukes_cantor_like", "jc", "jukes_cantor"):
        return jukes_cantor_like(int(params[0]) if params else 4)
    raise ValidationError(f"unknown preset {name!r}")


# ---------------------------------------------------------------------------
# model config files
#
#   # deepdist-model v1
#   preset = binary_asymmetric 0.8 0.2
# or
#   phi = 2
#   pi = 0.8 0.2
#   q0 = -0.2 0.2
#   q1 = 0.8 -0.8

MODEL_HEADER = "# deepdist-model v1"


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip().lower()] = v.strip()
    return out


def model_from_config(text: str) -> RateMatrix:
    kv = parse_kv(text)
    if "preset" in kv:
        name, *params = kv["preset"].split()
        return preset_models(name, *map(float, params))
    try:
        phi = int(kv["phi"])
        pi = [float(x) for x in kv["pi"].split()]
        rows = [[float(x) for x in kv[f"q{i}"].split()] for i in range(phi)]
    except KeyError as e:
        raise ConfigError(f"model config missing key {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigError(f"bad number in model config: {e}") from None
    return build_gtr(rows, pi)


def model_to_config(model: RateMatrix) -> str:
    lines = [MODEL_HEADER, f"phi = {model.phi}", "pi = " + " ".join(repr(float(p)) for p in model.pi)]
    for i, row in enumerate(model.Q):
        lines.append(f"q{i} = " + " ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"
