"""Heat kernel on the line and Green functions of the heat equation on [0, 1].

Two series represent the Green function,

* the method of images, a sum of shifted Gaussians, fast for small times,
* the eigenfunction expansion ``sum_k exp(-k^2 pi^2 t) e_k(x) e_k(y)``
  with the orthonormal basis ``e_0 = 1, e_k = sqrt(2) cos(k pi x)``
  (Neumann) or ``e_k = sqrt(2) sin(k pi x)`` (Dirichlet), fast for large
  times.

Both are truncated with an explicit tail bound, so every value returned is
within ``abs_tol`` of the infinite series.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import DomainError, TruncationError

__all__ = [
    "BoundaryCondition",
    "KernelParams",
    "KernelPoint",
    "DEFAULT_PARAMS",
    "heat_kernel_free",
    "green_eval",
    "image_sum",
    "spectral_sum",
    "green_mass",
    "green_convolve",
    "green_sq_integral",
    "green_l1_time_diff",
    "eigenvalues",
    "eigenfunctions",
    "write_kernel_table",
]


class BoundaryCondition(str, enum.Enum):
    NEUMANN = "neumann"
    DIRICHLET = "dirichlet"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise DomainError(f"unknown boundary condition {value!r}") from None


@dataclass(frozen=True)
class KernelParams:
    """Truncation policy for the Green function series.

    ``switch_time`` selects the image sum for ``t < switch_time`` and the
    eigenfunction expansion otherwise.
    """

    abs_tol: float = 1e-14
    switch_time: float = 0.1
    max_terms: int = 100_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and math.isfinite(self.abs_tol)):
            raise DomainError(f"abs_tol must be positive, got {self.abs_tol}")
        if not self.switch_time > 0:
            raise DomainError(f"switch_time must be positive, got {self.switch_time}")
        if self.max_terms < 1:
            raise DomainError(f"max_terms must be >= 1, got {self.max_terms}")


DEFAULT_PARAMS = KernelParams()


@dataclass(frozen=True)
class KernelPoint:
    t: float
    x: float
    y: float

    def __post_init__(self):
        _check_time(self.t)
        for name in ("x", "y"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name}={v} outside [0, 1]")


def _check_time(t):
    if not (math.isfinite(t) and t > 0):
        raise DomainError(f"time must be finite and positive, got {t}")


def _check_unit(name, v):
    arr = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} outside [0, 1]")
    return arr


def _scalar_or_array(out):
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def heat_kernel_free(t, x, y):
    """Gaussian heat kernel ``exp(-(x-y)^2/4t) / sqrt(4 pi t)`` on the real line."""
    _check_time(t)
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return _scalar_or_array(np.exp(-d * d / (4.0 * t)) / math.sqrt(4.0 * math.pi * t))


# -- truncation certificates -------------------------------------------------


def image_terms(t, abs_tol, max_terms):
    """Smallest ``n0`` such that images with ``|n| > n0`` contribute < abs_tol/2.

    For ``x, y`` in [0, 1] and ``|n| >= 2`` both exponents are bounded by
    ``exp(-(|n|-1)^2 / t)``, which gives a geometric tail bound.
    """
    pref = 4.0 / math.sqrt(4.0 * math.pi * t)
    n0 = 1
    while True:
        bound = pref * math.exp(-n0 * n0 / t) / -math.expm1(-(2 * n0 + 1) / t)
        if bound <= 0.5 * abs_tol:
            return n0
        if 2 * n0 + 1 > max_terms:
            raise TruncationError(
                f"image sum at t={t} needs more than {max_terms} terms", bound
            )
        n0 += 1


def spectral_terms(t, abs_tol, max_terms, amplitude=2.0):
    """Number of modes ``k0`` such that ``sum_{k >= k0}`` is below abs_tol/2.

    ``amplitude`` bounds ``|e_k(x) e_k(y)|`` (2 for the orthonormal basis).
    """
    a = math.pi * math.pi * t
    # first guess from exp(-k^2 a) = tol, then walk up until the bound holds
    k0 = max(1, int(math.sqrt(max(math.log(4.0 * amplitude / abs_tol), 0.0) / a)))
    while True:
        bound = amplitude * math.exp(-k0 * k0 * a) / -math.expm1(-(2 * k0 + 1) * a)
        if bound <= 0.5 * abs_tol:
            break
        k0 += 1
    # shrink back while the certificate still holds
    while k0 > 1:
        k = k0 - 1
        bound = amplitude * math.exp(-k * k * a) / -math.expm1(-(2 * k + 1) * a)
        if bound > 0.5 * abs_tol:
            break
        k0 = k
    if k0 > max_terms:
        raise TruncationError(
            f"spectral sum at t={t} needs {k0} > {max_terms} terms",
            amplitude * math.exp(-max_terms**2 * a),
        )
    return k0


def eigenvalues(bc, K):
    """Eigenvalues ``k^2 pi^2`` of the modes used for truncation index ``K``."""
    return (mode_numbers(bc, K) * math.pi) ** 2


def mode_numbers(bc, K):
    bc = BoundaryCondition.parse(bc)
    if bc is BoundaryCondition.NEUMANN:
        return np.arange(0, K + 1, dtype=float)
    return np.arange(1, K + 1, dtype=float)


def eigenfunctions(bc, K, x):
    """Matrix ``E[..., j] = e_{k_j}(x)`` of the orthonormal eigenfunctions."""
    bc = BoundaryCondition.parse(bc)
    k = mode_numbers(bc, K)
    arg = np.multiply.outer(np.asarray(x, dtype=float), k * math.pi)
    if bc is BoundaryCondition.NEUMANN:
        out = math.sqrt(2.0) * np.cos(arg)
        out[..., 0] = 1.0
        return out
    return math.sqrt(2.0) * np.sin(arg)


# -- the two series ----------------------------------------------------------


def image_sum(bc, t, x, y, params=DEFAULT_PARAMS):
    """Green function by the method of images."""
    bc = BoundaryCondition.parse(bc)
    _check_time(t)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n0 = image_terms(t, params.abs_tol, params.max_terms)
    n = np.arange(-n0, n0 + 1, dtype=float)
    dm = (x - y)[..., None] - 2.0 * n
    dp = (x + y)[..., None] - 2.0 * n
    a = np.exp(-dm * dm / (4.0 * t))
    b = np.exp(-dp * dp / (4.0 * t))
    s = a + b if bc is BoundaryCondition.NEUMANN else a - b
    return _scalar_or_array(s.sum(axis=-1) / math.sqrt(4.0 * math.pi * t))


def spectral_sum(bc, t, x, y, params=DEFAULT_PARAMS):
    """Green function by its eigenfunction expansion."""
    bc = BoundaryCondition.parse(bc)
    _check_time(t)
    k0 = spectral_terms(t, params.abs_tol, params.max_terms)
    K = k0 - 1 if bc is BoundaryCondition.NEUMANN else max(k0 - 1, 1)
    lam = eigenvalues(bc, K)
    w = np.exp(-lam * t)
    ex = eigenfunctions(bc, K, x)
    ey = eigenfunctions(bc, K, y)
    return _scalar_or_array((ex * ey * w).sum(axis=-1))


def _use_images(t, params, representation):
    if representation in (None, "auto"):
        return t < params.switch_time
    if representation == "image":
        return True
    if representation == "spectral":
        return False
    raise DomainError(f"unknown representation {representation!r}")


def green_eval(bc, t, x, y, params=DEFAULT_PARAMS, representation="auto"):
    """Evaluate ``G_t(x, y)`` with truncation error at most ``params.abs_tol``.

    Parameters
    ----------
    bc : BoundaryCondition or str
        ``"neumann"`` (reflecting) or ``"dirichlet"`` (absorbing).
    t : float
        Diffusion time, ``t > 0``.
    x, y : float or array_like
        Points in [0, 1]; arrays broadcast against each other.
    params : KernelParams
        Truncation policy.
    representation : {"auto", "image", "spectral"}
        Force one of the series; ``"auto"`` switches at ``params.switch_time``.
    """
    _check_time(t)
    x = _check_unit("x", x)
    y = _check_unit("y", y)
    if _use_images(t, params, representation):
        return image_sum(bc, t, x, y, params)
    return spectral_sum(bc, t, x, y, params)


def green_eval_point(bc, p: KernelPoint, params=DEFAULT_PARAMS):
    return green_eval(bc, p.t, p.x, p.y, params)


# -- closed-form integrals ---------------------------------------------------


def green_mass(bc, t, x, params=DEFAULT_PARAMS, representation="auto"):
    """``int_0^1 G_t(x, y) dy`` integrated term by term."""
    bc = BoundaryCondition.parse(bc)
    _check_time(t)
    x = _check_unit("x", x)
    if _use_images(t, params, representation):
        n0 = image_terms(t, params.abs_tol, params.max_terms)
        n = np.arange(-n0, n0 + 1, dtype=float)
        r = 2.0 * math.sqrt(t)
        xs = x[..., None] - 2.0 * n
        # y -> x - y - 2n over y in [0, 1], and y -> x + y - 2n
        direct = 0.5 * (erf(xs / r) - erf((xs - 1.0) / r))
        mirror = 0.5 * (erf((xs + 1.0) / r) - erf(xs / r))
        s = direct + mirror if bc is BoundaryCondition.NEUMANN else direct - mirror
        return _scalar_or_array(s.sum(axis=-1))
    if bc is BoundaryCondition.NEUMANN:
        # only the constant mode has nonzero mean
        return _scalar_or_array(np.ones_like(x))
    k0 = spectral_terms(t, params.abs_tol, params.max_terms)
    K = max(k0 - 1, 1)
    k = mode_numbers(bc, K)
    means = math.sqrt(2.0) * (1.0 - np.cos(k * math.pi)) / (k * math.pi)
    w = np.exp(-eigenvalues(bc, K) * t)
    return _scalar_or_array((eigenfunctions(bc, K, x) * w * means).sum(axis=-1))


def _mode_sum(bc, tau, x, z, params):
    """``sum_k exp(-lambda_k tau) e_k(x) e_k(z)`` with certified truncation."""
    k0 = spectral_terms(tau, params.abs_tol, params.max_terms)
    K = k0 - 1 if bc is BoundaryCondition.NEUMANN else max(k0 - 1, 1)
    lam = eigenvalues(bc, K)
    return lam, eigenfunctions(bc, K, x), eigenfunctions(bc, K, z)


def green_convolve(bc, s, t, x, z, params=DEFAULT_PARAMS):
    """``int_0^1 G_t(x, y) G_s(y, z) dy`` via orthonormality of the modes."""
    bc = BoundaryCondition.parse(bc)
    _check_time(s)
    _check_time(t)
    x = _check_unit("x", x)
    z = _check_unit("z", z)
    lam, ex, ez = _mode_sum(bc, s + t, x, z, params)
    w = np.exp(-lam * t) * np.exp(-lam * s)
    return _scalar_or_array((ex * ez * w).sum(axis=-1))


def green_sq_integral(bc, t, x, params=DEFAULT_PARAMS, representation="auto"):
    """``int_0^1 G_t(x, y)^2 dy = sum_k exp(-2 lambda_k t) e_k(x)^2``.

    The mode sum equals ``G_{2t}(x, x)``; below the switch time that value is
    taken from the image sum instead, which needs only a handful of terms.
    """
    bc = BoundaryCondition.parse(bc)
    _check_time(t)
    x = _check_unit("x", x)
    if _use_images(2.0 * t, params, representation):
        return image_sum(bc, 2.0 * t, x, x, params)
    lam, ex, _ = _mode_sum(bc, 2.0 * t, x, x, params)
    return _scalar_or_array((ex * ex * np.exp(-2.0 * lam * t)).sum(axis=-1))


# -- L1 time regularity ------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _panels(center, scale):
    offsets = scale * np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    pts = np.concatenate(
        [[0.0, 1.0, center], center - offsets, center + offsets, offsets, 1.0 - offsets]
    )
    pts = np.unique(np.clip(pts, 0.0, 1.0))
    return pts


def _composite_gl(f, breaks):
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    weights = (half[:, None] * _GL_WEIGHTS).ravel()
    return float(np.dot(weights, f(nodes)))


def green_l1_time_diff(bc, s, t, params=DEFAULT_PARAMS, n_quad=64):
    """Largest ``int_0^1 |G_t - G_s|`` over the free variable.

    The free variable is sampled on ``n_quad`` midpoints of [0, 1], so the
    result is a lower bound of the true supremum.  Both integration variables
    are tried.
    """
    bc = BoundaryCondition.parse(bc)
    _check_time(s)
    _check_time(t)
    if not s < t:
        raise DomainError(f"need s < t, got s={s}, t={t}")
    free = (np.arange(n_quad) + 0.5) / n_quad
    scale = math.sqrt(s)
    best = 0.0
    for p in free:
        breaks = _panels(p, scale)
        dy = _composite_gl(
            lambda y: np.abs(green_eval(bc, t, p, y, params) - green_eval(bc, s, p, y, params)),
            breaks,
        )
        dx = _composite_gl(
            lambda x: np.abs(green_eval(bc, t, x, p, params) - green_eval(bc, s, x, p, params)),
            breaks,
        )
        best = max(best, dy, dx)
    return best


def write_kernel_table(path, rows):
    """Write ``(t, x, y, bc, repr, value)`` rows as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "bc", "repr", "value"])
        for t, x, y, bc, rep, value in rows:
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y)),
                        BoundaryCondition.parse(bc).value, rep, repr(float(value))])
