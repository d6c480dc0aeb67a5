"""Validator regimes: elementwise law, matched ratio, TVD with mask."""
from __future__ import annotations

import numpy as np
import pytest

from kbench.dtypes import DType
from kbench.errors import (
    DegenerateDistribution,
    DTypeMismatch,
    LengthMismatch,
    SamplerCrashed,
    ShapeMismatch,
)
from kbench.kernels import derive_sampling_target
from kbench.tensor import Tensor
from kbench.validators import (
    DEFAULT_TOLERANCES,
    MATCHED_RATIO_RHO,
    StochasticConfig,
    Tolerance,
    check_deterministic,
    check_matched_ratio,
    check_output,
    check_stochastic,
    tvd,
    validate_outputs,
)


def f32(values) -> Tensor:
    return Tensor(DType.F32, np.asarray(values, np.float32))


# ---------------------------------------------------------------------------
# config types
# ---------------------------------------------------------------------------


def test_tolerance_validation():
    Tolerance(0.0, 0.0)
    with pytest.raises(ValueError):
        Tolerance(-1e-3, 0.0)
    with pytest.raises(ValueError):
        Tolerance(0.0, float("inf"))
    with pytest.raises(ValueError):
        StochasticConfig(trials=0)
    with pytest.raises(ValueError):
        StochasticConfig(tau_tvd=0.0)


def test_default_tolerances_table():
    assert DEFAULT_TOLERANCES[DType.F32] == Tolerance(1e-5, 1e-5)
    assert DEFAULT_TOLERANCES[DType.F16] == Tolerance(1e-3, 1e-3)
    assert DEFAULT_TOLERANCES[DType.BF16] == Tolerance(1e-2, 1e-2)
    assert DEFAULT_TOLERANCES[DType.F8E4M3] == Tolerance(1e-3, 1e-3)
    assert MATCHED_RATIO_RHO == 0.95


# ---------------------------------------------------------------------------
# deterministic regime
# ---------------------------------------------------------------------------


def test_identical_tensors_pass_with_zero_errors():
    t = f32([[1.0, -2.0], [0.0, 3.5]])
    v = check_deterministic(t, t, Tolerance(0.0, 0.0))
    assert v.passed
    assert v.max_absolute_error == 0.0
    assert v.max_relative_error == 0.0
    assert v.failing_fraction == 0.0


def test_exact_boundary_is_inside_one_ulp_beyond_is_outside():
    # dyadic construction: every quantity below is exact in float32/float64,
    # so the boundary comparison has no rounding slack
    tol = Tolerance(2.0**-10, 2.0**-10)
    ref = f32([1.0, 2.0, 4.0])
    bound = [tol.eps_abs + tol.eps_rel * r for r in [1.0, 2.0, 4.0]]
    on_edge = f32([1.0 + bound[0], 2.0 + bound[1], 4.0 + bound[2]])
    assert check_deterministic(on_edge, ref, tol).passed

    beyond = np.nextafter(on_edge.data, np.inf)
    v = check_deterministic(f32(beyond), ref, tol)
    assert not v.passed
    assert v.failing_fraction == pytest.approx(1.0)

    one_off = on_edge.data.copy()
    one_off[1] = np.nextafter(one_off[1], np.inf)
    v = check_deterministic(f32(one_off), ref, tol)
    assert not v.passed
    assert v.failing_fraction == pytest.approx(1 / 3)


def test_non_finite_solution_fails_any_tolerance():
    ref = f32([1.0, 2.0, 3.0])
    for poison in (np.nan, np.inf, -np.inf):
        sol_data = ref.data.copy()
        sol_data[1] = poison
        v = check_deterministic(f32(sol_data), ref, Tolerance(1e9, 1e9))
        assert not v.passed
        assert v.max_absolute_error == np.inf
        assert "non-finite" in v.detail


def test_relative_error_reported_against_floor_at_zero_ref():
    ref = f32([0.0])
    sol = f32([1e-6])
    v = check_deterministic(sol, ref, Tolerance(1e-5, 0.0))
    assert v.passed                       # eps_abs governs zeros
    assert v.max_absolute_error == pytest.approx(1e-6, rel=1e-6)
    assert v.max_relative_error == pytest.approx(1e-6 / 1e-12, rel=1e-6)


def test_verdict_asymmetry_through_ref_term():
    tol = Tolerance(0.0, 0.6)
    a, b = f32([2.0]), f32([1.0])
    assert not check_deterministic(a, b, tol).passed   # 1 > 0.6*|1|
    assert check_deterministic(b, a, tol).passed       # 1 <= 0.6*|2|


def test_shape_and_dtype_mismatches_raise():
    with pytest.raises(ShapeMismatch):
        check_deterministic(f32([1.0, 2.0]), f32([1.0]), Tolerance(1, 1))
    with pytest.raises(DTypeMismatch):
        check_deterministic(
            f32([1.0]), Tensor(DType.F16, np.asarray([1.0], np.float16)), Tolerance(1, 1)
        )


# ---------------------------------------------------------------------------
# matched-ratio regime
# ---------------------------------------------------------------------------


def _ratio_case(n_bad: int):
    ref = f32(np.linspace(1.0, 2.0, 100))
    sol = ref.data.copy()
    sol[:n_bad] += 1.0  # far outside (1e-3, 1e-3) bounds
    return f32(sol), ref


def test_matched_ratio_thresholds():
    tol = Tolerance(1e-3, 1e-3)
    sol, ref = _ratio_case(4)   # 96% within
    assert check_matched_ratio(sol, ref, tol, 0.95).passed
    sol, ref = _ratio_case(6)   # 94% within
    v = check_matched_ratio(sol, ref, tol, 0.95)
    assert not v.passed
    assert v.failing_fraction == pytest.approx(0.06)
    sol, ref = _ratio_case(5)   # exactly 95%: >= rho passes
    assert check_matched_ratio(sol, ref, tol, 0.95).passed


def test_matched_ratio_rejects_non_finite_regardless_of_ratio():
    ref = f32(np.ones(100))
    sol = ref.data.copy()
    sol[0] = np.nan
    v = check_matched_ratio(f32(sol), ref, Tolerance(1e-3, 1e-3), 0.5)
    assert not v.passed


def test_rho_one_equals_deterministic():
    rng = np.random.default_rng(13)
    tol = Tolerance(1e-3, 1e-3)
    for _ in range(50):
        ref = f32(rng.normal(size=17))
        sol_data = ref.data + rng.choice(
            [0.0, 5e-4, 5e-2], size=17, p=[0.7, 0.2, 0.1]
        ).astype(np.float32)
        sol = f32(sol_data)
        det = check_deterministic(sol, ref, tol)
        ratio = check_matched_ratio(sol, ref, tol, 1.0)
        assert det.passed == ratio.passed
        assert det.failing_fraction == ratio.failing_fraction


def test_matched_ratio_rho_out_of_range():
    t = f32([1.0])
    with pytest.raises(ValueError):
        check_matched_ratio(t, t, Tolerance(1, 1), 0.0)
    with pytest.raises(ValueError):
        check_matched_ratio(t, t, Tolerance(1, 1), 1.5)


# ---------------------------------------------------------------------------
# TVD
# ---------------------------------------------------------------------------


def test_tvd_hand_cases():
    assert tvd(np.array([0.25, 0.75]), np.array([0.25, 0.75])) == 0.0
    assert tvd(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert tvd(np.array([0.5, 0.3, 0.2]), np.array([0.4, 0.4, 0.2])) == pytest.approx(0.1)


def test_tvd_errors():
    with pytest.raises(LengthMismatch):
        tvd(np.array([1.0]), np.array([0.5, 0.5]))
    with pytest.raises(DegenerateDistribution):
        tvd(np.array([0.5, 0.4]), np.array([0.5, 0.5]))


def test_tvd_range_and_triangle_inequality():
    rng = np.random.default_rng(99)
    for _ in range(100):
        a, b, c = (rng.random(8) for _ in range(3))
        a, b, c = a / a.sum(), b / b.sum(), c / c.sum()
        dab, dbc, dac = tvd(a, b), tvd(b, c), tvd(a, c)
        for d in (dab, dbc, dac):
            assert 0.0 <= d <= 1.0
        assert dac <= dab + dbc + 1e-12


# ---------------------------------------------------------------------------
# stochastic regime
# ---------------------------------------------------------------------------


def _faithful_sampler(q):
    """Samples exactly from q, batch per call, seeded per call."""
    cdf = np.cumsum(q)

    def sample(seed):
        rng = np.random.Generator(np.random.Philox(key=seed))
        u = rng.random(500)
        return np.searchsorted(cdf, u, side="right")

    return sample


def test_one_hot_argmax_sampler_has_zero_tvd():
    p = np.array([0.0, 1.0, 0.0])
    v = check_stochastic(lambda seed: 1, p, top_k=1, cfg=StochasticConfig(trials=50, seed=3))
    assert v.passed
    assert v.extra["tvd"] == 0.0
    assert v.extra["trials"] == 50


def test_faithful_sampler_passes():
    p = np.array([0.5, 0.3, 0.2])
    _, q = derive_sampling_target(p, top_k=2)
    cfg = StochasticConfig(trials=5000, tau_tvd=0.02, seed=11)
    v = check_stochastic(_faithful_sampler(q), p, top_k=2, cfg=cfg)
    assert v.passed
    assert 0.0 <= v.extra["tvd"] <= 0.02


def test_biased_sampler_fails_by_distance():
    p = np.array([0.5, 0.3, 0.2])
    biased = np.array([0.8, 0.2, 0.0])  # respects the top-2 mask, wrong ratios
    cfg = StochasticConfig(trials=5000, tau_tvd=0.02, seed=17)
    v = check_stochastic(_faithful_sampler(biased), p, top_k=2, cfg=cfg)
    assert not v.passed
    assert v.extra["tvd"] > 0.1


def test_mask_violation_fails_immediately():
    p = np.array([0.5, 0.3, 0.2])
    calls = []

    def leaky(seed):
        calls.append(seed)
        return 2 if len(calls) == 5 else 0  # token 2 is masked under top_k=2

    v = check_stochastic(leaky, p, top_k=2, cfg=StochasticConfig(trials=10000, seed=29))
    assert not v.passed
    assert v.extra["mask_violation"] == 2
    assert v.extra["trials"] == 4          # stopped at the violation
    assert len(calls) == 5                 # no further sampling
    assert "mask" in v.detail


def test_out_of_vocabulary_sample_fails():
    p = np.array([0.5, 0.5])
    v = check_stochastic(lambda seed: 7, p, cfg=StochasticConfig(trials=100, seed=1))
    assert not v.passed
    assert "vocabulary" in v.detail


def test_sampler_crash_wrapped():
    def broken(seed):
        raise RuntimeError("kaput")

    with pytest.raises(SamplerCrashed):
        check_stochastic(broken, np.array([1.0]), cfg=StochasticConfig(trials=10, seed=1))
    with pytest.raises(SamplerCrashed):
        check_stochastic(lambda s: np.array([], np.int64), np.array([1.0]),
                         cfg=StochasticConfig(trials=10, seed=1))


def test_stochastic_verdict_reproducible():
    p = np.array([0.5, 0.3, 0.2])
    _, q = derive_sampling_target(p, top_k=2)
    cfg = StochasticConfig(trials=3000, tau_tvd=0.02, seed=41)
    v1 = check_stochastic(_faithful_sampler(q), p, top_k=2, cfg=cfg)
    v2 = check_stochastic(_faithful_sampler(q), p, top_k=2, cfg=cfg)
    assert v1 == v2


def test_batch_overshoot_is_truncated():
    p = np.array([1.0])
    v = check_stochastic(
        lambda seed: np.zeros(499, np.int64), p, cfg=StochasticConfig(trials=1000, seed=5)
    )
    assert v.passed
    assert v.extra["trials"] == 1000


# ---------------------------------------------------------------------------
# per-output dispatch
# ---------------------------------------------------------------------------


def test_f8_output_routes_to_matched_ratio():
    rng = np.random.default_rng(51)
    ref = Tensor.build(rng.normal(size=100), DType.F8E4M3)
    sol_data = ref.data.copy()
    sol_data[:4] = 448.0  # far off, but only 4%
    sol = Tensor(DType.F8E4M3, sol_data)
    assert check_output(sol, ref).passed
    sol_data[:6] = 448.0  # 6% now
    assert not check_output(Tensor(DType.F8E4M3, sol_data), ref).passed


def test_integer_outputs_demand_exact_equality():
    a = Tensor(DType.I64, np.array([1, 2, 3]))
    b = Tensor(DType.I64, np.array([1, 2, 4]))
    assert check_output(a, a).passed
    assert not check_output(a, b).passed


def test_validate_outputs_merges_and_detects_missing():
    y = f32([1.0, 2.0])
    z = f32([3.0])
    ref = {"y": y, "z": z}
    v = validate_outputs({"y": y, "z": z}, ref)
    assert v.passed
    bad = {"y": y, "z": f32([3.5])}
    v = validate_outputs(bad, ref)
    assert not v.passed
    assert "z" in v.detail
    assert v.max_absolute_error == pytest.approx(0.5)
    with pytest.raises(ShapeMismatch):
        validate_outputs({"y": y}, ref)
