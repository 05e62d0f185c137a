"""Mode-wise increments of the stochastic convolution.

Over a step of length ``delta`` the eigen-coordinate ``k`` of
``int int G_{t-s}(x, y) W(ds, dy)`` receives an independent centred Gaussian
with variance ``v_k = (1 - exp(-2 lambda_k delta)) / (2 lambda_k)``.

Random numbers come from Philox4x32-10 (Salmon et al., SC'11) keyed by the
64-bit master seed, with the counter ``(mode, step, path_lo, path_hi)``.
Every increment is therefore a pure function of ``(seed, path, step, mode)``
and does not depend on batching or thread count.  Uniforms are built from 53
bits and mapped to normals by the inverse CDF (Wichura's AS 241).
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DomainError
from .kernels import BoundaryCondition, eigenvalues, mode_numbers

GENERATOR_ID = "philox4x32-10/ctr(mode,step,path)/key(seed)/53bit/as241"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# test hook: relative perturbation of the variance formula (0 in normal use)
_variance_fault = 0.0


@numba.njit(cache=True, nogil=True, inline="always")
def _philox(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0 = (hi1 ^ c1 ^ k0) & _MASK
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK
        c3 = lo0
        if r < 9:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@numba.njit(cache=True, nogil=True)
def philox4x32(counter, key):
    """Philox4x32-10 block function on uint32 words, for known-answer tests."""
    out = np.empty(4, dtype=np.uint64)
    a, b, c, d = _philox(
        np.uint64(counter[0]), np.uint64(counter[1]), np.uint64(counter[2]),
        np.uint64(counter[3]), np.uint64(key[0]), np.uint64(key[1]),
    )
    out[0] = a
    out[1] = b
    out[2] = c
    out[3] = d
    return out


# Wichura, Algorithm AS 241 (PPND16), relative accuracy about 1e-16.
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966,
      5.475938084995344946e-4, 1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531,
      0.0148753612908506148525, 7.868691311456132591e-4,
      1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


@numba.njit(cache=True, nogil=True, inline="always")
def _poly(c, x):
    return ((((((c[7] * x + c[6]) * x + c[5]) * x + c[4]) * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0]


@numba.njit(cache=True, nogil=True)
def inverse_normal_cdf(p):
    """Standard normal quantile for ``0 < p < 1``."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0.0 else val


@numba.njit(cache=True, nogil=True)
def _normals(seed, paths, step0, nsteps, modes, out):
    k0 = np.uint64(seed) & _MASK
    k1 = np.uint64(seed) >> _S32
    for p in range(paths.size):
        pl = np.uint64(paths[p]) & _MASK
        ph = np.uint64(paths[p]) >> _S32
        for i in range(nsteps):
            st = np.uint64(step0 + i)
            for j in range(modes.size):
                w0, w1, _, _ = _philox(np.uint64(modes[j]), st, pl, ph, k0, k1)
                bits = (w0 >> np.uint64(5)) * np.uint64(67108864) + (w1 >> np.uint64(6))
                out[p, i, j] = inverse_normal_cdf((np.float64(bits) + 0.5) * (1.0 / 9007199254740992.0))


def standard_normals(seed, paths, step0, nsteps, modes, threads=1):
    """Standard normals indexed ``[path, step, mode]``.

    ``modes`` are mode numbers (not positions), so Neumann and Dirichlet
    tensors of the same seed share the streams of the modes they have in
    common.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    paths = np.ascontiguousarray(paths, dtype=np.uint64)
    modes = np.ascontiguousarray(modes, dtype=np.uint64)
    out = np.empty((paths.size, nsteps, modes.size))
    if threads <= 1 or paths.size < 2:
        _normals(np.uint64(seed), paths, step0, nsteps, modes, out)
    else:
        bounds = np.linspace(0, paths.size, min(threads, paths.size) + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            jobs = [
                pool.submit(_normals, np.uint64(seed), paths[a:b], step0, nsteps, modes, out[a:b])
                for a, b in zip(bounds[:-1], bounds[1:])
            ]
            for j in jobs:
                j.result()
    return out


def phi1(z):
    """``(1 - exp(-z)) / z`` with ``phi1(0) = 1``; Taylor series below 1e-8."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    out = np.where(small, 1.0 - z / 2.0 + z * z / 6.0, -np.expm1(-safe) / safe)
    return float(out) if out.ndim == 0 else out


def mode_variances(lam, delta):
    """``int_0^delta exp(-2 lambda s) ds`` for each eigenvalue."""
    v = delta * phi1(2.0 * np.asarray(lam, dtype=float) * delta)
    if _variance_fault:
        v = v * (1.0 + _variance_fault)
    return v


@dataclass(frozen=True)
class NoisePlan:
    delta: float
    steps: int
    K: int
    bc: BoundaryCondition = BoundaryCondition.NEUMANN

    def __post_init__(self):
        object.__setattr__(self, "bc", BoundaryCondition.parse(self.bc))
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise DomainError(f"delta must be positive, got {self.delta}")
        if self.steps < 1 or self.K < 1:
            raise DomainError("steps and K must be >= 1")

    @classmethod
    def from_horizon(cls, T, N, K, bc=BoundaryCondition.NEUMANN):
        return cls(T / N, N, K, bc)

    @property
    def T(self):
        return self.delta * self.steps

    @property
    def modes(self):
        return mode_numbers(self.bc, self.K).astype(np.uint64)

    @property
    def lam(self):
        return eigenvalues(self.bc, self.K)

    @property
    def variances(self):
        return mode_variances(self.lam, self.delta)


@dataclass(frozen=True)
class NoiseTensor:
    """Increments ``xi[step, mode]`` for one path, with seed lineage."""

    plan: NoisePlan
    values: np.ndarray
    master_seed: int
    path_index: int
    lineage: tuple = field(default=())

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def steps(self):
        return self.plan.steps


def sample_increments_array(master_seed, paths, plan, step0=0, nsteps=None, threads=1):
    """Increments for many paths, shape ``(len(paths), nsteps, modes)``."""
    nsteps = plan.steps - step0 if nsteps is None else nsteps
    z = standard_normals(master_seed, paths, step0, nsteps, plan.modes, threads)
    z *= np.sqrt(plan.variances)
    return z


def sample_increments(master_seed, path_index, plan, threads=1):
    """Noise tensor of one path; bit-identical for any ``threads``."""
    values = sample_increments_array(master_seed, [path_index], plan, threads=threads)[0]
    return NoiseTensor(plan, values, int(master_seed), int(path_index))


def aggregation_weights(lam, delta_fine, r):
    """``exp(-lambda (r-1-j) delta_fine)`` for ``j = 0..r-1``; shape (r, modes)."""
    lags = (r - 1 - np.arange(r))[:, None]
    return np.exp(-lags * delta_fine * np.asarray(lam)[None, :])


def aggregate_array(xi, lam, delta_fine, r):
    """Aggregate fine increments (axis -2) into blocks of ``r`` steps."""
    nsteps = xi.shape[-2]
    if r < 1 or nsteps % r:
        raise DomainError(f"{nsteps} fine steps are not divisible by r={r}")
    w = aggregation_weights(lam, delta_fine, r)
    blocks = xi.reshape(xi.shape[:-2] + (nsteps // r, r, xi.shape[-1]))
    return np.einsum("...ijk,jk->...ik", blocks, w)


def aggregate_to_coarse(fine: NoiseTensor, r: int) -> NoiseTensor:
    """Exact increments of the stochastic convolution over ``r`` fine steps."""
    if r < 1 or fine.steps % r:
        raise DomainError(f"{fine.steps} fine steps are not divisible by r={r}")
    p = fine.plan
    coarse_plan = NoisePlan(p.delta * r, p.steps // r, p.K, p.bc)
    values = aggregate_array(fine.values, p.lam, p.delta, r)
    return NoiseTensor(coarse_plan, values, fine.master_seed, fine.path_index,
                       fine.lineage + (("aggregate", r),))


_MAGIC = b"SHENOISE"
_HEADER = struct.Struct("<8sIQQQQd")
DUMP_VERSION = 1


def dump_tensor(tensor: NoiseTensor, path):
    """Binary dump: header ``magic,version,seed,path,steps,K,delta`` + float64 LE."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, DUMP_VERSION, tensor.master_seed & 0xFFFFFFFFFFFFFFFF,
                              tensor.path_index, tensor.steps, tensor.plan.K, tensor.plan.delta))
        fh.write(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())


def load_tensor(path, bc=BoundaryCondition.NEUMANN):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, seed, pidx, steps, K, delta = _HEADER.unpack(head)
        if magic != _MAGIC or version != DUMP_VERSION:
            raise DomainError(f"{path}: not a noise dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    plan = NoisePlan(delta, steps, K, bc)
    return NoiseTensor(plan, data.reshape(steps, -1), seed, pidx)
