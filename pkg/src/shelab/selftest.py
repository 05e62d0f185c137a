"""Fast invariant suite behind ``shelab selftest``."""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.integrate import quad

from . import noise
from .experiments import affine_density_study, fit_order
from .kernels import KernelParams, green_convolve, green_eval, green_mass, green_sq_integral, image_sum, spectral_sum
from .noise import mode_variances, philox4x32, standard_normals
from .scheme import AffineDrift, InitialDatum, ModelSpec, NamedDrift, SchemeConfig, simulate_batch


def _kernel_representations():
    rng = np.random.Generator(np.random.PCG64(7))
    p = KernelParams(abs_tol=1e-12)
    worst = 0.0
    for bc in ("neumann", "dirichlet"):
        t = 10 ** rng.uniform(-4, math.log10(4), 50)
        x, y = rng.uniform(0, 1, 50), rng.uniform(0, 1, 50)
        for ti, xi, yi in zip(t, x, y):
            worst = max(worst, abs(image_sum(bc, ti, xi, yi, p) - spectral_sum(bc, ti, xi, yi, p)))
    return worst <= 1e-10, f"max |image - spectral| = {worst:.3e}"


def _kernel_mass():
    worst = max(abs(green_mass("neumann", t, x) - 1.0) for t in (1e-4, 0.05, 0.2, 3.0) for x in (0.1, 0.4, 0.9))
    return worst <= 1e-12, f"max |mass - 1| = {worst:.3e}"


def _kernel_semigroup():
    worst = 0.0
    for bc in ("neumann", "dirichlet"):
        for s, t, x, z in ((0.1, 0.15, 0.2, 0.7), (0.01, 0.03, 0.5, 0.55), (0.3, 1.0, 0.9, 0.1)):
            worst = max(worst, abs(green_convolve(bc, s, t, x, z) - green_eval(bc, s + t, x, z)))
    return worst <= 1e-10, f"max semigroup residual = {worst:.3e}"


def _kernel_small_time():
    t = 1e-5
    target = 1.0 / (2.0 * math.sqrt(2.0 * math.pi))
    vals = (math.sqrt(t) * green_sq_integral("neumann", t, 0.5) / target,
            math.sqrt(t) * green_sq_integral("neumann", t, 0.0) / (2 * target),
            math.sqrt(t) * green_sq_integral("dirichlet", t, 0.5) / target)
    worst = max(abs(v - 1.0) for v in vals)
    return worst <= 0.01, f"max relative deviation = {worst:.3e}"


def _noise_isometry():
    lam = (np.arange(0, 256) * math.pi) ** 2
    worst = 0.0
    for delta in (1e-4, 1e-2, 0.25):
        v = mode_variances(lam, delta)
        for k in (0, 1, 5, 40, 255):
            # beyond 20/lam the integrand is below e^-40; keep quad on the support
            hi = delta if k == 0 else min(delta, 20.0 / lam[k])
            q, _ = quad(lambda s: math.exp(-2 * lam[k] * s), 0, hi, epsabs=1e-17, epsrel=1e-13)
            worst = max(worst, abs(v[k] - q))
    return worst <= 1e-13, f"max |v_k - quadrature| = {worst:.3e}"


def _philox_kat():
    got = philox4x32(np.array([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], dtype=np.uint64),
                     np.array([0xA4093822, 0x299F31D0], dtype=np.uint64))
    want = [0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1]
    return [int(g) for g in got] == want, "philox4x32-10 known answer"


def _noise_determinism():
    a = standard_normals(11, np.arange(40), 3, 5, np.arange(16), threads=1)
    b = standard_normals(11, np.arange(40), 3, 5, np.arange(16), threads=4)
    c = standard_normals(11, np.arange(20, 40), 3, 5, np.arange(16))
    ok = np.array_equal(a, b) and np.array_equal(a[20:], c)
    return ok, "bit-identical across thread counts and batches"


def _coupling_b0():
    model = ModelSpec(NamedDrift("zero"), 1.0, InitialDatum("cos", 0.7))
    cfg = SchemeConfig(1.0, 16, 63, 128, 3, strict=False)
    ac, af = simulate_batch(model, cfg, 5, np.arange(50))
    worst = float(np.max(np.abs(ac - af)))
    return worst <= 1e-10, f"max |u^delta - u_ref| in modes = {worst:.3e}"


def _fit_fixture():
    h = [2.0**-j for j in range(3, 8)]
    est = fit_order([(d, 0.3 * d**0.5, 1e-9) for d in h])
    ok = est.slope is not None and abs(est.slope - 0.5) <= 1e-12
    return ok, f"slope = {est.slope:.12f}"


def _affine_order():
    model = ModelSpec(AffineDrift(1.0, 0.0), 1.0, InitialDatum("const", 1.0))
    est = affine_density_study(model, 1.0, 0.5, [16 * 2**j for j in range(7)])
    return 0.8 <= est.slope <= 1.1 and est.extra["sup_decreasing"], f"slope = {est.slope:.4f}"


CHECKS = [
    ("kernel_representations", _kernel_representations),
    ("kernel_mass", _kernel_mass),
    ("kernel_semigroup", _kernel_semigroup),
    ("kernel_small_time", _kernel_small_time),
    ("noise_isometry", _noise_isometry),
    ("philox_known_answer", _philox_kat),
    ("noise_determinism", _noise_determinism),
    ("coupling_zero_drift", _coupling_b0),
    ("regression_fixture", _fit_fixture),
    ("affine_density_order", _affine_order),
]

FAULTS = {"isometry"}


@contextlib.contextmanager
def injected(fault):
    """Temporarily corrupt one formula so the suite can be seen to fail."""
    if fault is None:
        yield
        return
    if fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    old = noise._variance_fault
    noise._variance_fault = 1e-6
    try:
        yield
    finally:
        noise._variance_fault = old


def run(fault=None):
    """Run every check; returns ``(lines, failures)``."""
    lines, failures = [], []
    with injected(fault):
        for name, check in CHECKS:
            try:
                ok, detail = check()
            except Exception as exc:  # report, do not abort the suite
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            if not ok:
                failures.append(name)
    return lines, failures
