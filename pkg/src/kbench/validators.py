"""Three correctness regimes: deterministic elementwise, matched-ratio for
low precision, and stochastic total-variation distance with mask enforcement.

The elementwise rule is, for every element,

    |y_sol - y_ref| <= eps_abs + eps_rel * |y_ref|        (the pass/fail law)

plus an unconditional rejection of any non-finite value in the solution
output.  Relative errors are *reported* against max(|y_ref|, 1e-12) so zeros
do not divide away the number; the pass decision never uses that floor.

Matched-ratio keeps the same law but requires only a fraction rho of elements
to satisfy it — the regime for f8e4m3 outputs, whose grid is too coarse for
every element to land inside f16-grade bounds.

The stochastic regime replays a sampler many times and compares the empirical
token distribution with the ground-truth target; a single sample outside the
target's mask fails immediately, before any distance is computed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtypes import DType
from .errors import (
    DegenerateDistribution,
    DTypeMismatch,
    LengthMismatch,
    SamplerCrashed,
    ShapeMismatch,
)
from .kernels import derive_sampling_target
from .rng import splitmix64
from .tensor import Tensor

_REL_FLOOR = 1e-12


@dataclass(frozen=True)
class Tolerance:
    eps_abs: float
    eps_rel: float

    def __post_init__(self):
        if not (np.isfinite(self.eps_abs) and np.isfinite(self.eps_rel)):
            raise ValueError("tolerances must be finite")
        if self.eps_abs < 0 or self.eps_rel < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass(frozen=True)
class ValidationVerdict:
    passed: bool
    max_absolute_error: float
    max_relative_error: float
    failing_fraction: float
    detail: str = ""
    extra: dict | None = None


@dataclass(frozen=True)
class StochasticConfig:
    trials: int = 20000
    tau_tvd: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 < self.tau_tvd <= 1:
            raise ValueError("tau_tvd must lie in (0, 1]")


# Per-dtype defaults.  f8e4m3 pairs f16-grade tolerances with the
# matched-ratio regime; integers demand exactness.
DEFAULT_TOLERANCES: dict[DType, Tolerance] = {
    DType.F32: Tolerance(1e-5, 1e-5),
    DType.F16: Tolerance(1e-3, 1e-3),
    DType.BF16: Tolerance(1e-2, 1e-2),
    DType.F8E4M3: Tolerance(1e-3, 1e-3),
    DType.I32: Tolerance(0.0, 0.0),
    DType.I64: Tolerance(0.0, 0.0),
}

MATCHED_RATIO_RHO = 0.95
MATCHED_RATIO_DTYPES = frozenset({DType.F8E4M3})


def tolerance_for(dtype: DType) -> Tolerance:
    return DEFAULT_TOLERANCES[dtype]


# ---------------------------------------------------------------------------
# elementwise regimes
# ---------------------------------------------------------------------------


def _element_errors(y_sol: Tensor, y_ref: Tensor):
    if y_sol.dtype is not y_ref.dtype:
        raise DTypeMismatch(
            f"comparing {y_sol.dtype.value} against {y_ref.dtype.value}"
        )
    if y_sol.shape != y_ref.shape:
        raise ShapeMismatch(f"comparing shape {y_sol.shape} against {y_ref.shape}")
    sol = y_sol.data.astype(np.float64).ravel()
    ref = y_ref.data.astype(np.float64).ravel()
    finite = np.isfinite(sol)
    diff = np.abs(sol - ref)
    diff[~finite] = np.inf  # non-finite elements count as infinitely wrong
    rel = diff / np.maximum(np.abs(ref), _REL_FLOOR)
    return sol, ref, diff, rel, finite


def _verdict(diff, rel, finite, within, detail_parts) -> tuple[float, float, float, bool]:
    n = diff.size
    max_abs = float(diff.max()) if n else 0.0
    max_rel = float(rel.max()) if n else 0.0
    failing = int(n - np.count_nonzero(within & finite))
    nonfinite = int(n - np.count_nonzero(finite))
    if nonfinite:
        detail_parts.append(f"{nonfinite} non-finite element(s) in solution output")
    return max_abs, max_rel, failing / n if n else 0.0, nonfinite == 0


def check_deterministic(y_sol: Tensor, y_ref: Tensor, tol: Tolerance) -> ValidationVerdict:
    """Every element must satisfy the elementwise law; any non-finite fails."""
    _, ref, diff, rel, finite = _element_errors(y_sol, y_ref)
    bound = tol.eps_abs + tol.eps_rel * np.abs(ref)
    within = diff <= bound
    parts: list[str] = []
    max_abs, max_rel, failing_fraction, all_finite = _verdict(diff, rel, finite, within, parts)
    passed = all_finite and failing_fraction == 0.0
    if not passed and failing_fraction:
        parts.append(f"{failing_fraction:.6g} of elements outside tolerance")
    return ValidationVerdict(passed, max_abs, max_rel, failing_fraction, "; ".join(parts))


def check_matched_ratio(
    y_sol: Tensor, y_ref: Tensor, tol: Tolerance, rho: float
) -> ValidationVerdict:
    """At least ``rho`` of elements must satisfy the elementwise law."""
    if not 0 < rho <= 1:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    _, ref, diff, rel, finite = _element_errors(y_sol, y_ref)
    bound = tol.eps_abs + tol.eps_rel * np.abs(ref)
    within = diff <= bound
    parts: list[str] = []
    max_abs, max_rel, failing_fraction, all_finite = _verdict(diff, rel, finite, within, parts)
    passed = all_finite and (1.0 - failing_fraction) >= rho
    if not passed and failing_fraction:
        parts.append(
            f"matched ratio {1.0 - failing_fraction:.6g} below required {rho:g}"
        )
    return ValidationVerdict(passed, max_abs, max_rel, failing_fraction, "; ".join(parts))


# ---------------------------------------------------------------------------
# stochastic regime
# ---------------------------------------------------------------------------


def tvd(q: np.ndarray, f_hat: np.ndarray) -> float:
    """Total variation distance, (1/2) sum |q_i - f_i|."""
    q = np.asarray(q, dtype=np.float64)
    f_hat = np.asarray(f_hat, dtype=np.float64)
    if q.shape != f_hat.shape or q.ndim != 1:
        raise LengthMismatch(f"distributions of shapes {q.shape} and {f_hat.shape}")
    for name, dist in (("q", q), ("f_hat", f_hat)):
        if abs(float(dist.sum()) - 1.0) > 1e-6:
            raise DegenerateDistribution(f"{name} sums to {float(dist.sum())!r}, not 1")
    return float(0.5 * np.abs(q - f_hat).sum())


def check_stochastic(
    sample_fn,
    p: np.ndarray,
    top_k: int | None = None,
    top_p: float | None = None,
    cfg: StochasticConfig = StochasticConfig(),
) -> ValidationVerdict:
    """Replay ``sample_fn`` until ``cfg.trials`` tokens are collected and
    compare the empirical distribution against the derived target.

    ``sample_fn(seed)`` may return one token or a batch (any extra beyond the
    trial budget is discarded).  Per-call seeds come from the splitmix64
    stream at ``cfg.seed``, so verdicts are reproducible.  Any token outside
    the target mask — or outside the vocabulary — fails immediately.
    """
    mask, q = derive_sampling_target(p, top_k, top_p)
    vocab = q.size
    counts = np.zeros(vocab, dtype=np.int64)
    collected = 0
    state = cfg.seed
    while collected < cfg.trials:
        state, seed = splitmix64(state)
        try:
            raw = sample_fn(seed)
        except Exception as exc:
            raise SamplerCrashed(f"sampler raised {type(exc).__name__}: {exc}") from exc
        tokens = np.atleast_1d(np.asarray(raw, dtype=np.int64)).ravel()
        if tokens.size == 0:
            raise SamplerCrashed("sampler returned no tokens")
        tokens = tokens[: cfg.trials - collected]
        out_of_range = (tokens < 0) | (tokens >= vocab)
        if np.any(out_of_range):
            bad = int(tokens[out_of_range][0])
            return ValidationVerdict(
                False, 1.0, 0.0, 1.0,
                f"sample {bad} outside vocabulary [0, {vocab})",
                {"mask_violation": bad, "trials": collected},
            )
        violating = ~mask[tokens]
        if np.any(violating):
            bad = int(tokens[violating][0])
            return ValidationVerdict(
                False, 1.0, 0.0, 1.0,
                f"sample {bad} violates the target mask",
                {"mask_violation": bad, "trials": collected},
            )
        np.add.at(counts, tokens, 1)
        collected += tokens.size
    distance = tvd(q, counts / cfg.trials)
    passed = distance <= cfg.tau_tvd
    return ValidationVerdict(
        passed, distance, 0.0, 0.0 if passed else 1.0,
        f"tvd {distance:.6g} vs tau {cfg.tau_tvd:g} over {cfg.trials} trials",
        {"tvd": distance, "trials": cfg.trials},
    )


# ---------------------------------------------------------------------------
# per-output dispatch
# ---------------------------------------------------------------------------


def check_output(y_sol: Tensor, y_ref: Tensor, tol: Tolerance | None = None) -> ValidationVerdict:
    """Apply the regime this dtype calls for (deterministic or matched-ratio)."""
    tol = tol if tol is not None else tolerance_for(y_ref.dtype)
    if y_ref.dtype in MATCHED_RATIO_DTYPES:
        return check_matched_ratio(y_sol, y_ref, tol, MATCHED_RATIO_RHO)
    return check_deterministic(y_sol, y_ref, tol)


def merge_verdicts(named: dict[str, ValidationVerdict]) -> ValidationVerdict:
    """One verdict over several outputs: all must pass; error maxima are taken
    across outputs and failing fractions combine element-weighted via detail."""
    if not named:
        raise ValueError("no verdicts to merge")
    passed = all(v.passed for v in named.values())
    detail = "; ".join(
        f"{name}: {'ok' if v.passed else (v.detail or 'failed')}" for name, v in named.items()
    )
    return ValidationVerdict(
        passed,
        max(v.max_absolute_error for v in named.values()),
        max(v.max_relative_error for v in named.values()),
        max(v.failing_fraction for v in named.values()),
        detail,
    )


def validate_outputs(
    sol_outputs: dict[str, Tensor],
    ref_outputs: dict[str, Tensor],
    tolerances: dict[str, Tolerance] | None = None,
) -> ValidationVerdict:
    """Validate a full output set against the reference, regime per dtype."""
    missing = sorted(set(ref_outputs) - set(sol_outputs))
    if missing:
        raise ShapeMismatch(f"solution outputs missing {missing}")
    named = {
        name: check_output(sol_outputs[name], ref_outputs[name],
                           (tolerances or {}).get(name))
        for name in ref_outputs
    }
    return merge_verdicts(named)
