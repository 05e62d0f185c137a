import math

import numpy as np
import pytest
from scipy.special import ndtri

from shelab.errors import DomainError
from shelab.noise import (
    GENERATOR_ID,
    NoisePlan,
    aggregate_array,
    aggregate_to_coarse,
    dump_tensor,
    inverse_normal_cdf,
    load_tensor,
    mode_variances,
    phi1,
    philox4x32,
    sample_increments,
    sample_increments_array,
    standard_normals,
)


def _within(sample, target, n_se=3.0):
    n = sample.size
    var = np.var(sample, ddof=1)
    # standard error of the sample variance of a Gaussian
    se = var * math.sqrt(2.0 / (n - 1))
    return abs(var - target) <= n_se * se


def test_philox_known_answers():
    # Random123 reference vectors
    zero = philox4x32(np.zeros(4, dtype=np.uint64), np.zeros(2, dtype=np.uint64))
    assert [int(v) for v in zero] == [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]
    ones = philox4x32(np.full(4, 0xFFFFFFFF, dtype=np.uint64), np.full(2, 0xFFFFFFFF, dtype=np.uint64))
    assert [int(v) for v in ones] == [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]


def test_inverse_cdf_matches_scipy():
    p = np.concatenate([np.linspace(1e-12, 1 - 1e-12, 2001), [1e-300, 0.5, 0.975]])
    got = np.array([inverse_normal_cdf(float(v)) for v in p])
    assert np.allclose(got, ndtri(p), rtol=1e-13, atol=1e-14)


def test_zero_mode_variance_is_delta():
    plan = NoisePlan(0.01, 1, 1)
    assert plan.variances[0] == 0.01
    xi = sample_increments_array(4, np.arange(1_000_000), plan)[:, 0, 0]
    assert _within(xi, 0.01)


def test_saturated_variance():
    lam = (200 * math.pi) ** 2
    assert abs(mode_variances(np.array([lam]), 0.01)[0] - 1 / (2 * lam)) <= 1e-12


def test_variance_matches_integral():
    lam = np.array([0.0, 9.87, 1e3, 1e6])
    v = mode_variances(lam, 0.02)
    exact = [0.02] + [(1 - math.exp(-2 * l * 0.02)) / (2 * l) for l in lam[1:]]
    assert np.allclose(v, exact, rtol=1e-14)


def test_phi1_small_argument():
    assert phi1(0.0) == 1.0
    assert phi1(1e-10) == pytest.approx(1 - 5e-11, rel=1e-15)
    assert phi1(2.0) == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-15)


def test_thread_count_does_not_change_bits():
    plan = NoisePlan(0.01, 7, 15)
    a = sample_increments(99, 3, plan, threads=1).values
    b = sample_increments(99, 3, plan, threads=8).values
    assert a.tobytes() == b.tobytes()
    many1 = standard_normals(5, np.arange(3000), 0, 2, np.arange(4), threads=1)
    many8 = standard_normals(5, np.arange(3000), 0, 2, np.arange(4), threads=8)
    assert many1.tobytes() == many8.tobytes()


def test_counter_addressing():
    # a window of steps equals the matching slice of the full sheet
    full = standard_normals(1, np.arange(5), 0, 10, np.arange(6))
    part = standard_normals(1, np.arange(2, 4), 3, 4, np.arange(6))
    assert np.array_equal(full[2:4, 3:7], part)


def test_distinct_seeds_and_paths_differ():
    plan = NoisePlan(0.01, 3, 4)
    a = sample_increments(1, 0, plan).values
    assert not np.array_equal(a, sample_increments(1, 1, plan).values)
    assert not np.array_equal(a, sample_increments(2, 0, plan).values)


def test_normals_look_standard():
    z = standard_normals(8, np.arange(200_000), 0, 1, np.arange(1)).ravel()
    assert abs(z.mean()) <= 4 / math.sqrt(z.size)
    assert _within(z, 1.0, 4)


def test_aggregate_identity():
    plan = NoisePlan(0.01, 6, 5)
    t = sample_increments(3, 0, plan)
    assert np.array_equal(aggregate_to_coarse(t, 1).values, t.values)


def test_aggregate_zero_mode_is_sum():
    plan = NoisePlan(0.01, 6, 5)
    t = sample_increments(3, 0, plan)
    c = aggregate_to_coarse(t, 3)
    assert np.allclose(c.values[:, 0], t.values[:, 0].reshape(2, 3).sum(axis=1), atol=1e-15)
    assert c.plan.delta == pytest.approx(0.03)
    assert c.lineage == (("aggregate", 3),)


def test_aggregate_variance():
    plan = NoisePlan(0.001, 10, 5)
    target = mode_variances(plan.lam, 0.01)[5]
    vals = []
    for start in range(0, 1_000_000, 200_000):
        xi = sample_increments_array(6, np.arange(start, start + 200_000), plan)
        vals.append(aggregate_array(xi, plan.lam, plan.delta, 10)[:, 0, 5])
    assert _within(np.concatenate(vals), target)


def test_aggregate_weights_match_geometric_sum():
    plan = NoisePlan(0.001, 10, 8)
    w = np.exp(-2 * plan.lam[None, :] * plan.delta * np.arange(10)[:, None])
    assert np.allclose((w * plan.variances).sum(axis=0), mode_variances(plan.lam, 0.01), rtol=1e-13)


def test_aggregate_rejects_bad_ratio():
    t = sample_increments(3, 0, NoisePlan(0.01, 5, 2))
    with pytest.raises(DomainError):
        aggregate_to_coarse(t, 2)


def test_dump_round_trip(tmp_path):
    t = sample_increments(2**63 + 5, 12, NoisePlan(0.02, 4, 7))
    dump_tensor(t, tmp_path / "n.bin")
    back = load_tensor(tmp_path / "n.bin")
    assert back.values.tobytes() == t.values.tobytes()
    assert (back.master_seed, back.path_index, back.plan.delta) == (t.master_seed, 12, 0.02)


def test_generator_id_mentions_algorithm():
    assert GENERATOR_ID.startswith("philox4x32-10")
