"""Eigenbasis coefficients <-> values on the midpoint collocation grid.

The grid is ``x_j = (j + 1/2) / M``.  With the orthonormal basis of
:mod:`shelab.kernels`, synthesis is a DCT-III (Neumann) or DST-III
(Dirichlet) and analysis the matching type-II transform scaled by ``1/M``,
which is exactly the midpoint rule for ``<g, e_k>``.

All array functions act on the last axis, so a batch of paths is simply a
2-D array ``(paths, modes)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import AliasingError, DomainError, EvaluationError
from .kernels import BoundaryCondition

_SQRT2 = math.sqrt(2.0)


def grid(M):
    """Midpoint collocation grid with ``M`` points."""
    return (np.arange(M) + 0.5) / M


def n_modes(bc, K):
    return K + 1 if BoundaryCondition.parse(bc) is BoundaryCondition.NEUMANN else K


def check_grid(K, M):
    if M < 2 * K + 2:
        raise AliasingError(f"grid of {M} points too coarse for K={K} (need M >= {2 * K + 2})")


def synthesize_array(bc, coeffs, M):
    """Grid values ``sum_k a_k e_k(x_j)`` for coefficient arrays (last axis modes)."""
    bc = BoundaryCondition.parse(bc)
    coeffs = np.asarray(coeffs, dtype=float)
    nm = coeffs.shape[-1]
    K = nm - 1 if bc is BoundaryCondition.NEUMANN else nm
    check_grid(K, M)
    c = np.zeros(coeffs.shape[:-1] + (M,))
    if bc is BoundaryCondition.NEUMANN:
        c[..., 0] = coeffs[..., 0]
        c[..., 1:nm] = coeffs[..., 1:] / _SQRT2
        return fft.dct(c, type=3, axis=-1)
    # DST-III input slot j carries mode j + 1
    c[..., :nm] = coeffs / _SQRT2
    return fft.dst(c, type=3, axis=-1)


def analyze_array(bc, values, K):
    """Midpoint-rule inner products ``(1/M) sum_j g(x_j) e_k(x_j)``."""
    bc = BoundaryCondition.parse(bc)
    values = np.asarray(values, dtype=float)
    M = values.shape[-1]
    check_grid(K, M)
    if bc is BoundaryCondition.NEUMANN:
        y = fft.dct(values, type=2, axis=-1)[..., : K + 1] / (2.0 * M)
        y[..., 1:] *= _SQRT2
        return y
    return fft.dst(values, type=2, axis=-1)[..., :K] * (_SQRT2 / (2.0 * M))


@dataclass(frozen=True)
class ModeVector:
    """Coefficients of a function in the eigenbasis.

    Neumann vectors hold modes ``0..K``; Dirichlet vectors modes ``1..K``.
    """

    bc: BoundaryCondition
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bc", BoundaryCondition.parse(self.bc))
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise DomainError("coefficients must be a nonempty 1-D array")
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficients must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self):
        return self.coeffs.size - 1 if self.bc is BoundaryCondition.NEUMANN else self.coeffs.size

    @classmethod
    def zeros(cls, bc, K):
        return cls(bc, np.zeros(n_modes(bc, K)))


@dataclass(frozen=True)
class GridFunction:
    bc: BoundaryCondition
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bc", BoundaryCondition.parse(self.bc))
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise DomainError("grid function needs at least two values")
        if not np.all(np.isfinite(v)):
            raise DomainError("grid values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def M(self):
        return self.values.size

    @property
    def x(self):
        return grid(self.M)


def synthesize(m: ModeVector, M: int) -> GridFunction:
    return GridFunction(m.bc, synthesize_array(m.bc, m.coeffs, M))


def analyze(g: GridFunction, K: int) -> ModeVector:
    return ModeVector(g.bc, analyze_array(g.bc, g.values, K))


def sample(bc, func, K, M):
    """Project a pointwise map on [0, 1] onto the first modes."""
    x = grid(M)
    vals = np.asarray(func(x), dtype=float) * np.ones_like(x)
    bad = ~np.isfinite(vals)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"non-finite value at x={x[j]!r}")
    return ModeVector(bc, analyze_array(bc, vals, K))


def project_drift_array(bc, b, coeffs, M):
    """Modes of ``x -> b(u(x))`` for coefficient arrays."""
    bc = BoundaryCondition.parse(bc)
    K = coeffs.shape[-1] - 1 if bc is BoundaryCondition.NEUMANN else coeffs.shape[-1]
    u = synthesize_array(bc, coeffs, M)
    bu = b(u)
    if not np.all(np.isfinite(bu)):
        idx = np.unravel_index(int(np.flatnonzero(~np.isfinite(bu))[0]), bu.shape)
        j = idx[-1]
        raise EvaluationError(
            f"drift is non-finite at grid point x_{j}={grid(M)[j]!r} (u={u[idx]!r})"
        )
    return analyze_array(bc, bu, K)


def project_drift(b, state: ModeVector, M: int) -> ModeVector:
    """Modes of ``b`` composed with the function represented by ``state``."""
    return ModeVector(state.bc, project_drift_array(state.bc, b, state.coeffs, M))


def evaluate_at(bc, coeffs, x):
    """Point values of coefficient arrays at arbitrary ``x`` (no grid)."""
    from .kernels import eigenfunctions

    coeffs = np.asarray(coeffs, dtype=float)
    K = coeffs.shape[-1] - 1 if BoundaryCondition.parse(bc) is BoundaryCondition.NEUMANN else coeffs.shape[-1]
    return coeffs @ eigenfunctions(bc, K, x).T
