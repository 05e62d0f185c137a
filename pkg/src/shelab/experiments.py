"""Convergence-order studies and small-time asymptotics.

Every Monte Carlo error estimate is coupled: the perturbed run at step
``delta`` and the reference run at ``delta / 2**m`` share one Brownian sheet
(see :mod:`shelab.scheme`).  Since the reference step scales with ``delta``,
an error ``C delta^p`` is measured as ``C (1 - 2^(-m p)) delta^p`` and the
fitted slope is unbiased.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import density as dens
from .errors import DomainError
from .kernels import BoundaryCondition, green_sq_integral
from .scheme import (
    AffineDrift,
    GaussianLaw,
    ModelSpec,
    NamedDrift,
    SchemeConfig,
    affine_exact_law,
    affine_perturbed_law,
    initial_modes,
    point_values,
    simulate_batch,
    drift_modes,
)
from .noise import phi1
from .kernels import eigenfunctions, eigenvalues, spectral_terms

NOISE_FLOOR = 3.0
# errors this small are floating-point residue, not a signal
ROUNDOFF_FLOOR = 1e-12
_GOLDEN = 0x9E3779B97F4A7C15

TEST_FUNCTIONS = {
    "tanh": np.tanh,
    "cos": np.cos,
    "sin": np.sin,
    "atan": np.arctan,
}


def test_function(name):
    """Smooth bounded test functions, plus mollifiers ``g:<zeta>:<z>``."""
    if name in TEST_FUNCTIONS:
        return TEST_FUNCTIONS[name]
    if name.startswith("g:"):
        _, zeta, z = name.split(":")
        zeta, z = float(zeta), float(z)
        return lambda u: dens.mollifier(zeta, u - z)
    raise DomainError(f"unknown test function {name!r}")


def level_seed(master_seed, level):
    """Seed of ladder level ``level``: ``master + (level + 1) * 0x9E3779B97F4A7C15 mod 2^64``."""
    return (int(master_seed) + (level + 1) * _GOLDEN) % 2**64


@dataclass
class OrderEstimate:
    slope: float | None
    intercept: float | None
    levels: list
    residual: float | None = None
    excluded: list = field(default_factory=list)
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def fit_order(points, noise_floor=NOISE_FLOOR):
    """Weighted least squares of ``log |error|`` against ``log h``.

    ``points`` holds ``(h, error, stderr)``.  A point is used only if
    ``|error| > noise_floor * stderr`` (deterministic points have stderr 0
    and need an error above ``ROUNDOFF_FLOOR``).  Weights are ``(error / stderr)^2``, the
    inverse variance of ``log |error|``; if any used point is deterministic
    the fit is unweighted.
    """
    levels = [{"h": float(h), "error": float(e), "stderr": float(s)} for h, e, s in points]
    used, excluded = [], []
    for i, p in enumerate(levels):
        e, s = abs(p["error"]), p["stderr"]
        if e > noise_floor * s and e > ROUNDOFF_FLOOR:
            used.append(i)
        else:
            excluded.append(i)
    if len(used) < 3:
        return OrderEstimate(None, None, levels, None, excluded, "inconclusive")
    h = np.array([levels[i]["h"] for i in used])
    e = np.array([abs(levels[i]["error"]) for i in used])
    s = np.array([levels[i]["stderr"] for i in used])
    w = (e / s) ** 2 if np.all(s > 0) else np.ones_like(e)
    X = np.column_stack([np.ones_like(h), np.log(h)])
    y = np.log(e)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    res = y - X @ coef
    resid = float(np.sqrt(np.sum(w * res**2) / np.sum(w)))
    return OrderEstimate(float(coef[1]), float(coef[0]), levels, resid, excluded, "ok")


# -- ladder studies ----------------------------------------------------------


@dataclass(frozen=True)
class LadderStudy:
    model: ModelSpec
    T: float = 1.0
    x: float = 0.5
    N0: int = 8
    n_levels: int = 4
    paths: int = 200_000
    test_function: str = "tanh"
    metric: str = "weak_error"
    master_seed: int = 20240501
    strict: bool = True
    K: int = 63
    M: int = 128
    ref_refinement: int = 2
    threads: int = 1

    def __post_init__(self):
        if self.n_levels < 4:
            raise DomainError("a ladder needs at least 4 levels")
        if self.metric not in ("weak_error", "sup_density", "tv", "strong_l2"):
            raise DomainError(f"unknown metric {self.metric!r}")
        if not 0.0 <= self.x <= 1.0:
            raise DomainError("probe point outside [0, 1]")

    @property
    def steps(self):
        return [self.N0 * 2**j for j in range(self.n_levels)]

    def config(self, N):
        return SchemeConfig(self.T, N, self.K, self.M, self.ref_refinement, self.strict)


@dataclass
class LevelSamples:
    delta: float
    seed: int
    coarse: np.ndarray
    reference: np.ndarray


def ladder_samples(study, independent=False):
    """Coupled (or independent) samples of ``u^delta(T, x)`` and the reference."""
    out = []
    for j, N in enumerate(study.steps):
        seed = level_seed(study.master_seed, j)
        cfg = study.config(N)
        ind = level_seed(seed, 1000) if independent else None
        ac, af = simulate_batch(study.model, cfg, seed, np.arange(study.paths),
                                independent_seed=ind, threads=study.threads)
        out.append(LevelSamples(cfg.delta, seed,
                                point_values(study.model.bc, ac, study.x),
                                point_values(study.model.bc, af, study.x)))
    return out


def _mean_and_stderr(d):
    n = d.size
    mean = math.fsum(d) / n
    var = math.fsum((d - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return mean, math.sqrt(var / n)


def weak_error_study(study, samples=None):
    """Fit the order of ``E f(u^delta(T, x)) - E f(u(T, x))``."""
    if study.metric not in ("weak_error", "strong_l2"):
        raise DomainError(f"metric {study.metric!r} is not a weak/strong error")
    samples = samples if samples is not None else ladder_samples(study)
    f = test_function(study.test_function)
    points = []
    for lv in samples:
        if study.metric == "weak_error":
            d = f(lv.coarse) - f(lv.reference)
            points.append((lv.delta, *_mean_and_stderr(d)))
        else:
            m2, s2 = _mean_and_stderr((lv.coarse - lv.reference) ** 2)
            rms = math.sqrt(m2)
            points.append((lv.delta, rms, s2 / (2 * rms) if rms > 0 else 0.0))
    est = fit_order(points)
    est.extra.update(seeds=[lv.seed for lv in samples], strict=study.strict,
                     paths=study.paths, test_function=study.test_function)
    return est


def _kde_pair(lv, zeta, n_grid=1025):
    laws = [GaussianLaw(float(np.mean(v)), float(np.var(v)) + zeta) for v in (lv.coarse, lv.reference)]
    z = dens.default_grid(*laws, n=n_grid, width=8.0)
    return z, dens.kde(lv.coarse, zeta, z), dens.kde(lv.reference, zeta, z)


def _pointwise_stderr(lv, zeta, z):
    d = dens.mollifier(zeta, z[:, None] - lv.coarse[None, :]) - dens.mollifier(zeta, z[:, None] - lv.reference[None, :])
    return d.std(axis=1, ddof=1) / math.sqrt(lv.coarse.size)


def density_error_study(study, samples=None, zeta=None):
    """Fit the order of the sup-norm (or TV) distance between density estimates.

    Both laws are estimated by the Gaussian mollifier with bandwidth
    ``zeta(n)``.  The standard error quoted for a sup distance is the
    pointwise standard error of the coupled difference at the maximiser; for
    TV it is the integral of pointwise standard errors.
    """
    if study.metric not in ("sup_density", "tv"):
        raise DomainError(f"metric {study.metric!r} is not a density metric")
    samples = samples if samples is not None else ladder_samples(study)
    zeta = zeta if zeta is not None else dens.bandwidth(study.paths)
    points, sup_raw, tv_raw, refined = [], [], [], []
    for lv in samples:
        z, qa, qb = _kde_pair(lv, zeta)
        dist = dens.refined_distances(qa, qb)
        sup_raw.append(dist["sup"])
        tv_raw.append(dist["tv"])
        refined.append(dist)
        if study.metric == "sup_density":
            jstar = int(np.argmax(np.abs(qa.values - qb.values)))
            se = float(_pointwise_stderr(lv, zeta, z[jstar: jstar + 1])[0])
            points.append((lv.delta, dist["sup"], se))
        else:
            zs = z[::16]
            se = float(np.trapezoid(_pointwise_stderr(lv, zeta, zs), zs))
            points.append((lv.delta, dist["tv"], se))
    est = fit_order(points)
    est.extra.update(zeta=zeta, sup=sup_raw, tv=tv_raw, refined=refined,
                     tv_decreasing=bool(all(b < a for a, b in zip(tv_raw, tv_raw[1:]))),
                     seeds=[lv.seed for lv in samples], strict=study.strict)
    return est


def variance_reduction(study, N):
    """Variance of the weak-error estimator with shared and independent noise."""
    one = replace(study, N0=N, n_levels=4)
    f = test_function(study.test_function)
    cfg = one.config(N)
    seed = level_seed(study.master_seed, 0)
    ac, af = simulate_batch(study.model, cfg, seed, np.arange(study.paths), threads=study.threads)
    ai, _ = simulate_batch(study.model, cfg, seed, np.arange(study.paths), reference=False,
                           independent_seed=level_seed(seed, 1000), threads=study.threads)
    x, bc = study.x, study.model.bc
    ref = f(point_values(bc, af, x))
    shared = float(np.var(f(point_values(bc, ac, x)) - ref, ddof=1))
    independent = float(np.var(f(point_values(bc, ai, x)) - ref, ddof=1))
    return shared, independent


def affine_density_study(model, T, x, steps, K=0, n_grid=4097):
    """Deterministic density errors between exact and perturbed affine laws."""
    if not model.is_affine:
        raise DomainError("affine_density_study needs an affine drift")
    exact = affine_exact_law(model, T, x, K=None if K == 0 else K)
    sup, tv, laws = [], [], []
    for N in steps:
        cfg = SchemeConfig(T, N, K=max(K, 1), M=max(2 * K + 2, 4), strict=False)
        pert = affine_perturbed_law(model, cfg, x, K=K)
        laws.append((N, pert.mean, pert.variance))
        z = dens.default_grid(exact, pert, n=n_grid, width=10.0)
        qa, qb = dens.gaussian_density(exact, z), dens.gaussian_density(pert, z)
        sup.append(dens.sup_distance(qa, qb))
        tv.append(dens.tv_distance(qa, qb))
    deltas = [T / N for N in steps]
    est = fit_order([(d, e, 0.0) for d, e in zip(deltas, sup)])
    tv_fit = fit_order([(d, e, 0.0) for d, e in zip(deltas, tv)])
    est.extra.update(
        exact={"mean": exact.mean, "variance": exact.variance},
        perturbed=[{"N": n, "mean": m, "variance": v} for n, m, v in laws],
        tv=tv, tv_slope=tv_fit.slope,
        sup_decreasing=bool(all(b < a for a, b in zip(sup, sup[1:]))),
        tv_decreasing=bool(all(b < a for a, b in zip(tv, tv[1:]))),
    )
    return est


def small_drift_study(base, epsilons, N, *, T=1.0, x=0.5, sigma=1.0, u0=None, paths=200_000,
                      test_function_name="tanh", master_seed=20240501, K=63, M=128,
                      ref_refinement=2, strict=False, threads=1, bc=BoundaryCondition.NEUMANN):
    """Weak error at fixed ``delta = T/N`` for drifts ``eps * base``.

    All epsilons share the same sheets (common random numbers), which makes
    the ratio between neighbouring errors sharp.
    """
    if not isinstance(base, NamedDrift):
        raise DomainError("small-drift studies need a named drift")
    from .scheme import InitialDatum

    u0 = u0 if u0 is not None else InitialDatum("const", 1.0)
    f = test_function(test_function_name)
    cfg = SchemeConfig(T, N, K, M, ref_refinement, strict)
    rows = []
    for eps in epsilons:
        model = ModelSpec(replace(base, scale=base.scale * eps), sigma, u0, bc)
        ac, af = simulate_batch(model, cfg, master_seed, np.arange(paths), threads=threads)
        d = f(point_values(bc, ac, x)) - f(point_values(bc, af, x))
        rows.append((eps, *_mean_and_stderr(d)))
    est = fit_order(rows)
    est.extra.update(delta=cfg.delta, strict=strict, paths=paths)
    return est


# -- one-step asymptotics ----------------------------------------------------

_GL64 = np.polynomial.legendre.leggauss(64)


def one_step_variance(bc, x, delta, sigma=1.0):
    """``sigma^2 int_0^delta int_0^1 G_s(x, y)^2 dy ds`` from green_sq_integral.

    The substitution ``s = w^2`` removes the ``s^(-1/2)`` singularity.
    """
    nodes, weights = _GL64
    root = math.sqrt(delta)
    w = 0.5 * root * (nodes + 1.0)
    vals = np.array([green_sq_integral(bc, wi * wi, x) for wi in w])
    return sigma**2 * float(np.sum(0.5 * root * weights * 2.0 * w * vals))


def one_step_mean(model, x, delta):
    """``int G_delta u0 + int_0^delta int G_{delta-s} b(u0)`` in eigen-coordinates."""
    K = spectral_terms(delta, 1e-14, 10**7)
    M = 2 * K + 2
    a0 = initial_modes(model, K, M)
    lam = eigenvalues(model.bc, K)
    b = drift_modes(model, a0[None, :], M)[0]
    a1 = np.exp(-lam * delta) * a0 + delta * phi1(lam * delta) * b
    return float(a1 @ eigenfunctions(model.bc, K, float(x)))


def limit_coefficient(x, sigma=1.0, bc=BoundaryCondition.NEUMANN):
    """``-sqrt(2 pi) / (4 sigma^2) (1 + sgn(x (1 - x)))`` (interior value for Dirichlet)."""
    bc = BoundaryCondition.parse(bc)
    if bc is BoundaryCondition.DIRICHLET:
        if not 0.0 < x < 1.0:
            raise DomainError("Dirichlet asymptotics need an interior point")
        return -math.sqrt(2.0 * math.pi) / (2.0 * sigma**2)
    return -math.sqrt(2.0 * math.pi) / (4.0 * sigma**2) * (1.0 + np.sign(x * (1.0 - x)))


def asymptotics_study(model, x, z_grid, deltas=(1e-3, 1e-4, 1e-5, 1e-6)):
    """Tabulate ``delta^(1/2) log q^delta_{delta,x}(z)`` against its limit parabola."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x={x} outside [0, 1]")
    z = np.atleast_1d(np.asarray(z_grid, dtype=float))
    u0x = float(np.asarray(model.u0(np.array([x])), dtype=float)[0])
    coef = limit_coefficient(x, model.sigma, model.bc)
    limit = coef * (z - u0x) ** 2
    rows, worst = [], {}
    for d in deltas:
        mu = one_step_mean(model, x, d)
        nu = one_step_variance(model.bc, x, d, model.sigma)
        logq = -0.5 * np.log(2.0 * math.pi * nu) - (z - mu) ** 2 / (2.0 * nu)
        val = math.sqrt(d) * logq
        dev = np.where(limit != 0.0, np.abs(val - limit) / np.abs(np.where(limit == 0, 1, limit)), np.abs(val))
        worst[d] = float(dev.max())
        for zi, vi, li in zip(z, val, limit):
            rows.append({"delta": d, "z": float(zi), "value": float(vi), "limit": float(li),
                         "mean": mu, "variance": nu})
    return {"rows": rows, "max_relative_deviation": worst, "coefficient": float(coef), "x": x}


# -- reports -----------------------------------------------------------------


def report_dict(name, estimate, config, seed, extra=None):
    out = {
        "study": name,
        "status": estimate.status,
        "config": config,
        "seed": seed,
        "levels": [{"delta": p["h"], "error": p["error"], "stderr": p["stderr"]} for p in estimate.levels],
        "slope": estimate.slope,
        "intercept": estimate.intercept,
        "residual": estimate.residual,
        "excluded": estimate.excluded,
        "extra": _plain(estimate.extra),
    }
    if extra:
        out.update(extra)
    return out


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def dumps_json(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def long_csv(name, estimate, metric):
    """Plot-ready rows ``study,level,delta,metric,value,stderr``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["study", "level", "delta", "metric", "value", "stderr"])
    for i, p in enumerate(estimate.levels):
        w.writerow([name, i, repr(p["h"]), metric, repr(p["error"]), repr(p["stderr"])])
    return buf.getvalue()
