"""Accelerated exponential Euler dynamics for the stochastic heat equation.

    du = (u_xx + b(u)) dt + sigma dW   on [0, 1],  u(0) = u0

In eigen-coordinates one step of length ``delta`` with the drift frozen at
the left endpoint reads

    a_k <- exp(-lambda_k delta) a_k + delta phi(lambda_k delta) bhat_k + sigma xi_k

with ``phi(z) = (1 - exp(-z)) / z`` and ``xi_k`` the exact increment of the
stochastic convolution (see :mod:`shelab.noise`).

A path ``(seed, path)`` owns one Brownian sheet, realised at the finest
resolution ``delta / 2**m``.  The reference run integrates it directly; the
perturbed run at step ``delta`` consumes its exact aggregation.  This is the
coupling used by every error estimator.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, HypothesisViolation
from .kernels import BoundaryCondition, eigenfunctions, eigenvalues, mode_numbers
from .noise import NoisePlan, aggregate_array, mode_variances, phi1, sample_increments_array
from .spectral import GridFunction, ModeVector, analyze_array, check_grid, grid, project_drift_array, synthesize_array

HYPOTHESIS_TEXT = "δ∈(0, T/12 ∧ log(3/2)/(4|b|₁))"

# -- drifts and initial data -------------------------------------------------


@dataclass(frozen=True)
class AffineDrift:
    b1: float
    c: float = 0.0

    tag = "affine"

    @property
    def lipschitz(self):
        return abs(self.b1)

    def __call__(self, u):
        return self.b1 * u + self.c


_NAMED = {
    "zero": (lambda u: np.zeros_like(u), 0.0),
    "sin": (np.sin, 1.0),
    "cos": (np.cos, 1.0),
    "tanh": (np.tanh, 1.0),
}


@dataclass(frozen=True)
class NamedDrift:
    """A bounded nonlinearity ``scale * base(u)`` with declared ``|b|_1``."""

    tag: str
    scale: float = 1.0
    func: Callable | None = None
    base_lipschitz: float | None = None

    def __post_init__(self):
        if self.func is None and self.tag not in _NAMED:
            raise DomainError(f"unknown drift {self.tag!r}; known: {sorted(_NAMED)}")
        if self.func is not None and self.base_lipschitz is None:
            raise DomainError("custom drifts must declare their Lipschitz constant")

    @property
    def base(self):
        return self.func if self.func is not None else _NAMED[self.tag][0]

    @property
    def lipschitz(self):
        lip = self.base_lipschitz if self.base_lipschitz is not None else _NAMED[self.tag][1]
        return abs(self.scale) * lip

    def __call__(self, u):
        if self.scale == 1.0:
            return self.base(u)
        return self.scale * self.base(u)


_INITIAL = {
    "zero": lambda x, v: np.zeros_like(x),
    "const": lambda x, v: np.full_like(x, v),
    "cos": lambda x, v: v * np.cos(math.pi * x),
    "sin": lambda x, v: v * np.sin(math.pi * x),
    "bump": lambda x, v: v * np.sin(math.pi * x) ** 2,
}


@dataclass(frozen=True)
class InitialDatum:
    """Continuous initial datum on [0, 1] from a small named family."""

    tag: str = "zero"
    value: float = 1.0

    def __post_init__(self):
        if self.tag not in _INITIAL:
            raise DomainError(f"unknown initial datum {self.tag!r}; known: {sorted(_INITIAL)}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return _INITIAL[self.tag](x, self.value)


@dataclass(frozen=True)
class ModelSpec:
    drift: AffineDrift | NamedDrift
    sigma: float = 1.0
    u0: Callable = InitialDatum("zero")
    bc: BoundaryCondition = BoundaryCondition.NEUMANN

    def __post_init__(self):
        object.__setattr__(self, "bc", BoundaryCondition.parse(self.bc))
        if not math.isfinite(self.sigma):
            raise DomainError("sigma must be finite")
        if not math.isfinite(self.drift.lipschitz):
            raise DomainError("drift needs a finite Lipschitz constant")

    @property
    def is_affine(self):
        return isinstance(self.drift, AffineDrift)

    @property
    def is_zero_drift(self):
        d = self.drift
        if isinstance(d, AffineDrift):
            return d.b1 == 0.0 and d.c == 0.0
        return d.scale == 0.0 or (d.func is None and d.tag == "zero")


@dataclass(frozen=True)
class SchemeConfig:
    T: float = 1.0
    N: int = 64
    K: int = 255
    M: int = 1024
    ref_refinement: int = 4
    strict: bool = True

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError(f"T must be positive, got {self.T}")
        for name in ("N", "K", "M", "ref_refinement"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        check_grid(self.K, self.M)

    @property
    def delta(self):
        return self.T / self.N

    @property
    def ratio(self):
        return 2**self.ref_refinement

    def step_bound(self, lipschitz):
        """Largest admissible step ``min(T/12, log(3/2) / (4 |b|_1))``."""
        cap = math.log(1.5) / (4.0 * lipschitz) if lipschitz > 0 else math.inf
        return min(self.T / 12.0, cap)

    def check(self, model):
        if self.strict and not self.delta < self.step_bound(model.drift.lipschitz):
            raise HypothesisViolation(
                f"step delta={self.delta:g} violates {HYPOTHESIS_TEXT} "
                f"(bound {self.step_bound(model.drift.lipschitz):g} for T={self.T:g}, "
                f"|b|_1={model.drift.lipschitz:g}); disable strict mode to run anyway"
            )


@dataclass(frozen=True)
class GaussianLaw:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DomainError(f"variance must be positive, got {self.variance}")

    @property
    def std(self):
        return math.sqrt(self.variance)


# -- stepping ----------------------------------------------------------------


def mode_means(bc, K):
    """``int_0^1 e_k`` for the modes of truncation ``K``."""
    k = mode_numbers(bc, K)
    if BoundaryCondition.parse(bc) is BoundaryCondition.NEUMANN:
        out = np.zeros_like(k)
        out[0] = 1.0
        return out
    return math.sqrt(2.0) * (1.0 - np.cos(k * math.pi)) / (k * math.pi)


def _n_to_K(bc, nm):
    return nm - 1 if BoundaryCondition.parse(bc) is BoundaryCondition.NEUMANN else nm


def drift_modes(model, coeffs, M):
    """Modes of ``b(u)``; exact for affine drifts, grid projection otherwise."""
    K = _n_to_K(model.bc, coeffs.shape[-1])
    d = model.drift
    if isinstance(d, AffineDrift):
        return d.b1 * coeffs + d.c * mode_means(model.bc, K)
    return project_drift_array(model.bc, d, coeffs, M)


class _Stepper:
    """Precomputed factors for steps of a fixed length."""

    def __init__(self, model, K, M, delta):
        self.model = model
        self.M = M
        lam = eigenvalues(model.bc, K)
        self.decay = np.exp(-lam * delta)
        self.gain = delta * phi1(lam * delta)
        self.skip_drift = model.is_zero_drift

    def __call__(self, a, xi):
        out = self.decay * a
        if not self.skip_drift:
            out += self.gain * drift_modes(self.model, a, self.M)
        if self.model.sigma != 0.0:
            out += self.model.sigma * xi
        return out


def step_perturbed(state: ModeVector, model, delta, xi, M=None) -> ModeVector:
    """One accelerated exponential Euler step in eigen-coordinates."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != state.coeffs.shape:
        raise DomainError(f"increments of shape {xi.shape} do not match state {state.coeffs.shape}")
    if state.bc is not model.bc:
        raise DomainError("state and model boundary conditions differ")
    M = M if M is not None else max(4 * state.K, 2 * state.K + 2)
    return ModeVector(state.bc, _Stepper(model, state.K, M, delta)(state.coeffs, xi))


def initial_modes(model, K, M):
    x = grid(M)
    vals = np.asarray(model.u0(x), dtype=float) * np.ones_like(x)
    return analyze_array(model.bc, vals, K)


_CHUNK = 1000


def _chunks(paths):
    """Fixed chunking by position so results do not depend on thread count."""
    return [paths[i: i + _CHUNK] for i in range(0, len(paths), _CHUNK)]


def _run_chunk(model, config, seed, paths, want_coarse, want_ref, independent_seed):
    K, M = config.K, config.M
    r = config.ratio
    fine = NoisePlan(config.delta / r, config.N * r, K, model.bc)
    lam = fine.lam
    a0 = initial_modes(model, K, M)
    coarse_step = _Stepper(model, K, M, config.delta)
    fine_step = _Stepper(model, K, M, fine.delta)
    ac = np.broadcast_to(a0, (len(paths), a0.size)).copy()
    af = ac.copy()
    for i in range(config.N):
        xi = sample_increments_array(seed, paths, fine, step0=i * r, nsteps=r)
        if want_ref:
            for j in range(r):
                af = fine_step(af, xi[:, j])
        if want_coarse:
            if independent_seed is not None:
                xi = sample_increments_array(independent_seed, paths, fine, step0=i * r, nsteps=r)
            xc = aggregate_array(xi, lam, fine.delta, r)[:, 0]
            ac = coarse_step(ac, xc)
    return ac, af


def simulate_batch(model, config, master_seed, paths, *, coarse=True, reference=True,
                   independent_seed=None, threads=1):
    """Terminal modes of the perturbed and reference runs for many paths.

    Returns ``(coarse_modes, reference_modes)``, each ``(len(paths), modes)``
    or ``None`` when not requested.  ``independent_seed`` drives the coarse
    run by a different sheet (for variance comparisons only).
    """
    config.check(model)
    paths = np.asarray(paths, dtype=np.int64)
    chunks = _chunks(paths)

    def job(p):
        return _run_chunk(model, config, master_seed, p, coarse, reference, independent_seed)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(job, chunks))
    else:
        results = [job(p) for p in chunks]
    ac = np.concatenate([c for c, _ in results]) if coarse else None
    af = np.concatenate([f for _, f in results]) if reference else None
    return ac, af


def simulate_path(model, config, master_seed, path_index) -> GridFunction:
    """Terminal state ``u^delta(T, .)`` on the collocation grid."""
    ac, _ = simulate_batch(model, config, master_seed, [path_index], reference=False)
    return GridFunction(model.bc, synthesize_array(model.bc, ac[0], config.M))


def simulate_reference(model, config, master_seed, path_index) -> GridFunction:
    """Terminal state of the same scheme at step ``delta / 2**m`` (coupled)."""
    _, af = simulate_batch(model, config, master_seed, [path_index], coarse=False)
    return GridFunction(model.bc, synthesize_array(model.bc, af[0], config.M))


def point_values(bc, modes, x):
    """Values of terminal states at a probe point ``x`` (exact for the modes)."""
    K = _n_to_K(bc, modes.shape[-1])
    return modes @ eigenfunctions(bc, K, float(x))


# -- affine laws -------------------------------------------------------------

_TAIL_K = 200_000


def _expm1_ratio(z):
    """``(exp(z) - 1) / z`` with value 1 at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(safe) / safe)


def _check_affine(model):
    if not model.is_affine:
        raise DomainError(f"drift {model.drift.tag!r} is not affine")


def _u0_modes(model, K, M=None):
    M = M if M is not None else max(2 * K + 2, 1024)
    return initial_modes(model, K, M)


def _green_diag_sum(bc, x):
    """``sum_{k>=1} e_k(x)^2 / (2 lambda_k)`` in closed form."""
    if bc is BoundaryCondition.NEUMANN:
        return 0.5 * (x * x - x + 1.0 / 3.0)
    return 0.5 * (x - x * x)


def _variance_tail(bc, b1, x, k_start):
    """``sum_{k >= k_start} e_k(x)^2 / (2 (lambda_k - b1))`` for ``lambda_{k_start} > b1``."""
    s = _green_diag_sum(bc, x)
    head = np.arange(1, k_start, dtype=float)
    if head.size:
        e2 = eigenfunctions(bc, int(head[-1]), x)[-head.size:] ** 2
        s -= float(np.sum(e2 / (2.0 * (head * math.pi) ** 2)))
    if b1 != 0.0:
        k = np.arange(k_start, _TAIL_K + 1, dtype=float)
        lam = (k * math.pi) ** 2
        e2 = 2.0 * (np.cos(k * math.pi * x) if bc is BoundaryCondition.NEUMANN else np.sin(k * math.pi * x)) ** 2
        s += float(np.sum(e2 * b1 / (2.0 * lam * (lam - b1))))
        # remaining k^-4 tail, bounded by its integral
        s += abs(b1) / (3.0 * math.pi**4 * _TAIL_K**3)
    return s


def _head_K(b1, T, K):
    """Modes summed explicitly before switching to the analytic tail."""
    k = 1
    while (k * math.pi) ** 2 <= 2.0 * abs(b1) + 1.0 or math.exp(-2.0 * ((k * math.pi) ** 2 - b1) * T) > 1e-18:
        k += 1
    return max(k, 8) if K is None else K


def affine_exact_law(model, T, x, K=None, M=None) -> GaussianLaw:
    """Law of ``u(T, x)`` for an affine drift ``b(u) = b1 u + c``.

    Each mode solves a linear SDE, so the law is Gaussian with

        m_k = exp((b1 - lambda_k) T) a_k(0) + c_k (exp((b1 - lambda_k) T) - 1) / (b1 - lambda_k)
        s_k = sigma^2 (exp(2 (b1 - lambda_k) T) - 1) / (2 (b1 - lambda_k))

    where ``c_k = c int e_k``.  ``K=None`` sums the full series (the variance
    tail in closed form); an integer ``K`` gives the law of the Galerkin
    truncation used by the simulator.
    """
    _check_affine(model)
    d = model.drift
    bc = model.bc
    Kh = _head_K(d.b1, T, K)
    lam = eigenvalues(bc, Kh)
    mu = d.b1 - lam
    e = eigenfunctions(bc, Kh, float(x))
    growth = np.exp(mu * T)
    a0 = _u0_modes(model, Kh, M)
    means = growth * a0 + d.c * mode_means(bc, Kh) * T * _expm1_ratio(mu * T)
    var_k = model.sigma**2 * T * _expm1_ratio(2.0 * mu * T)
    variance = float(np.sum(var_k * e * e))
    if K is None:
        k_next = int(mode_numbers(bc, Kh)[-1]) + 1
        # beyond the head, s_k = sigma^2 / (2 (lambda_k - b1)) up to exp(-2 lambda T) < 1e-18
        variance += model.sigma**2 * _variance_tail(bc, d.b1, float(x), k_next)
    return GaussianLaw(float(np.dot(means, e)), variance)


def affine_perturbed_law(model, config, x, K=None, M=None) -> GaussianLaw:
    """Law of ``u^delta(T, x)`` for an affine drift, by deterministic recursion.

    Per mode, with ``rho_k = exp(-lambda_k delta) + delta phi(lambda_k delta) b1``,

        mu_k <- rho_k mu_k + delta phi(lambda_k delta) c_k
        V_k  <- rho_k^2 V_k + sigma^2 v_k

    ``K`` defaults to ``config.K``.  Passing ``K=0`` requests the full-series
    law: 4096 explicit modes plus the exact law's variance tail beyond them.
    """
    _check_affine(model)
    d = model.drift
    bc = model.bc
    full = K == 0
    Kh = 4096 if full else (config.K if K is None else K)
    lam = eigenvalues(bc, Kh)
    delta = config.delta
    gain = delta * phi1(lam * delta)
    rho = np.exp(-lam * delta) + gain * d.b1
    forcing = gain * d.c * mode_means(bc, Kh)
    noise = model.sigma**2 * mode_variances(lam, delta)
    mu = _u0_modes(model, Kh, M)
    V = np.zeros_like(lam)
    for _ in range(config.N):
        mu = rho * mu + forcing
        V = rho * rho * V + noise
    e = eigenfunctions(bc, Kh, float(x))
    variance = float(np.sum(V * e * e))
    if full:
        k_next = int(mode_numbers(bc, Kh)[-1]) + 1
        variance += model.sigma**2 * _variance_tail(bc, d.b1, float(x), k_next)
    return GaussianLaw(float(np.dot(mu, e)), variance)
