"""Built-in reference evaluators — the single source of mathematical semantics.

Every operator follows the same two-layer shape: a *core* that takes plain
numpy arrays, computes in float32 (tokens in int64), and returns un-quantized
results; and a Tensor-level wrapper that quantizes core outputs at the
operator boundary.  `run_reference` dispatches a DefinitionRecord to its core
and quantizes to the definition's declared output dtypes, so a definition in
any supported precision gets a consistent reference output.

These evaluators are deliberately simple loops: they fix semantics, they are
not baselines.  Accumulation orders that affect bit-level results are part of
the contract and documented on each core.

For built-in op types the definition's inputs must be declared in the
canonical order given by each core's signature (the same order a plugin's
entry point receives them in).
"""
from __future__ import annotations

import math

import numpy as np

from .dtypes import DType, quantize
from .errors import (
    ConstraintViolated,
    DegenerateDistribution,
    SchemaError,
    ShapeMismatch,
    UnsupportedOpType,
)
from .tensor import Tensor
from .trace import DefinitionRecord, OpType

_LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _array_f32(t: Tensor, ndim: int, name: str) -> np.ndarray:
    if t.data.ndim != ndim:
        raise ShapeMismatch(f"{name}: expected {ndim}-d, got shape {t.shape}")
    return np.ascontiguousarray(t.data, dtype=np.float32)


def _array_int(t: Tensor, ndim: int, name: str) -> np.ndarray:
    if not t.dtype.is_int:
        raise ShapeMismatch(f"{name}: expected an integer tensor, got {t.dtype.value}")
    if t.data.ndim != ndim:
        raise ShapeMismatch(f"{name}: expected {ndim}-d, got shape {t.shape}")
    return np.ascontiguousarray(t.data, dtype=np.int64)


def _scalar(value, name: str) -> float:
    if isinstance(value, Tensor):
        return float(value.item())
    if isinstance(value, (int, float, np.integer, np.floating)):
        return float(value)
    raise ShapeMismatch(f"{name}: expected a scalar, got {type(value).__name__}")


# ---------------------------------------------------------------------------
# GEMM
# ---------------------------------------------------------------------------


def gemm_core(a32: np.ndarray, b32: np.ndarray) -> np.ndarray:
    """C[m,n] = sum_k A[m,k] * B[n,k], accumulated in f32, k ascending.

    The per-element operation sequence is exactly the naive triple loop with
    k innermost — each output element sees the same ordered chain of f32
    multiply-then-add steps, so results are bit-identical to that loop.
    """
    if a32.ndim != 2 or b32.ndim != 2 or a32.shape[1] != b32.shape[1]:
        raise ShapeMismatch(
            f"gemm expects A[M,K] and B[N,K]; got {a32.shape} and {b32.shape}"
        )
    m, k = a32.shape
    n = b32.shape[0]
    acc = np.zeros((m, n), np.float32)
    for j in range(k):
        acc += a32[:, j, None] * b32[None, :, j]
    return acc


def ref_gemm(A: Tensor, B: Tensor) -> Tensor:
    c32 = gemm_core(_array_f32(A, 2, "A"), _array_f32(B, 2, "B"))
    return Tensor(A.dtype, quantize(c32, A.dtype))


# ---------------------------------------------------------------------------
# Fused add + RMSNorm
# ---------------------------------------------------------------------------


def fused_add_rmsnorm_core(
    x32: np.ndarray, r32: np.ndarray, w32: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray]:
    """h = x + residual; y = h / sqrt(mean(h^2) + eps) * weight, all f32.

    The row mean uses numpy's summation (pairwise); that choice is part of
    the fixed reference semantics.
    """
    if x32.shape != r32.shape or x32.ndim != 2:
        raise ShapeMismatch(
            f"x and residual must share a 2-d shape; got {x32.shape} and {r32.shape}"
        )
    if w32.shape != (x32.shape[1],):
        raise ShapeMismatch(
            f"weight must have shape ({x32.shape[1]},), got {w32.shape}"
        )
    h = x32 + r32
    mean_sq = np.mean(h * h, axis=1, keepdims=True, dtype=np.float32)
    y = h / np.sqrt(mean_sq + np.float32(eps)) * w32
    return y, h


def ref_fused_add_rmsnorm(
    x: Tensor, residual: Tensor, weight: Tensor, eps
) -> tuple[Tensor, Tensor]:
    y32, h32 = fused_add_rmsnorm_core(
        _array_f32(x, 2, "x"),
        _array_f32(residual, 2, "residual"),
        _array_f32(weight, 1, "weight"),
        _scalar(eps, "eps"),
    )
    return (
        Tensor(x.dtype, quantize(y32, x.dtype)),
        Tensor(x.dtype, quantize(h32, x.dtype)),
    )


# ---------------------------------------------------------------------------
# Grouped-query attention, paged KV, decode (page_size = 1)
# ---------------------------------------------------------------------------


def gqa_paged_decode_core(
    q32: np.ndarray,
    k32: np.ndarray,
    v32: np.ndarray,
    kv_indptr: np.ndarray,
    kv_indices: np.ndarray,
    sm_scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-batch, per-head attention over gathered pages.

    For batch b and query head h (kv head = h // (Hq/Hkv)):
    logits = (q . K^T) * sm_scale over the pages kv_indices[indptr[b]:indptr[b+1]];
    output = softmax(logits) @ V; lse = log2-sum-exp of the scaled logits.
    An empty page range produces a zero output row and lse = -inf.
    """
    if q32.ndim != 3:
        raise ShapeMismatch(f"q must be [B,Hq,D], got {q32.shape}")
    if k32.shape != v32.shape or k32.ndim != 4:
        raise ShapeMismatch(
            f"k_cache and v_cache must share a 4-d shape; got {k32.shape} and {v32.shape}"
        )
    batch, num_qo_heads, head_dim = q32.shape
    num_pages, page_size, num_kv_heads, cache_dim = k32.shape
    if page_size != 1:
        raise ShapeMismatch(f"page_size must be 1, got {page_size}")
    if cache_dim != head_dim:
        raise ShapeMismatch(
            f"head_dim mismatch: q has {head_dim}, cache has {cache_dim}"
        )
    if num_qo_heads % num_kv_heads != 0:
        raise ShapeMismatch(
            f"{num_qo_heads} query heads not divisible by {num_kv_heads} kv heads"
        )
    if kv_indptr.ndim != 1 or kv_indptr.shape[0] != batch + 1:
        raise ConstraintViolated(
            f"kv_indptr must have length batch+1={batch + 1}, got {kv_indptr.shape}"
        )
    n_indices = kv_indices.shape[0]
    if int(kv_indptr[-1]) != n_indices:
        raise ConstraintViolated(
            f"kv_indptr[-1]={int(kv_indptr[-1])} != len(kv_indices)={n_indices}"
        )
    if np.any(kv_indptr < 0) or np.any(kv_indptr > n_indices):
        raise ConstraintViolated("kv_indptr values outside [0, len(kv_indices)]")
    if n_indices and (kv_indices.min() < 0 or kv_indices.max() >= num_pages):
        raise ConstraintViolated("kv_indices outside [0, num_pages)")

    gqa_ratio = num_qo_heads // num_kv_heads
    k_flat = k32[:, 0]  # [num_pages, num_kv_heads, head_dim]
    v_flat = v32[:, 0]

    output = np.zeros((batch, num_qo_heads, head_dim), np.float32)
    lse = np.full((batch, num_qo_heads), -np.inf, np.float32)

    for b in range(batch):
        start, end = int(kv_indptr[b]), int(kv_indptr[b + 1])
        if start >= end:
            continue  # no KV cache for this batch element
        tokens = kv_indices[start:end].astype(np.int64)
        k_batch = k_flat[tokens]  # [L, Hkv, D]
        v_batch = v_flat[tokens]
        for h in range(num_qo_heads):
            kv_head = h // gqa_ratio
            logits = (k_batch[:, kv_head] @ q32[b, h]) * np.float32(sm_scale)
            m = np.max(logits)
            p = np.exp(logits - m)
            denom = np.sum(p)
            output[b, h] = (p / denom) @ v_batch[:, kv_head]
            lse[b, h] = (m + np.log(denom)) / _LOG2
    return output, lse


def ref_gqa_paged_decode(
    q: Tensor,
    k_cache: Tensor,
    v_cache: Tensor,
    kv_indptr: Tensor,
    kv_indices: Tensor,
    sm_scale,
) -> tuple[Tensor, Tensor]:
    out32, lse32 = gqa_paged_decode_core(
        _array_f32(q, 3, "q"),
        _array_f32(k_cache, 4, "k_cache"),
        _array_f32(v_cache, 4, "v_cache"),
        _array_int(kv_indptr, 1, "kv_indptr"),
        _array_int(kv_indices, 1, "kv_indices"),
        _scalar(sm_scale, "sm_scale"),
    )
    return (
        Tensor(q.dtype, quantize(out32, q.dtype)),
        Tensor(DType.F32, lse32),
    )


def generate_paged_layout(
    seq_lens, num_pages: int, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """A valid page table: unique in-range pages, ascending within each
    sequence.  Returns (kv_indptr, kv_indices), both int32."""
    seq_lens = [int(n) for n in seq_lens]
    if any(n < 0 for n in seq_lens):
        raise ValueError("sequence lengths must be non-negative")
    total = sum(seq_lens)
    if total > num_pages:
        raise ValueError(f"{total} tokens do not fit in {num_pages} pages")
    rng = np.random.Generator(np.random.Philox(key=seed))
    chosen = rng.choice(num_pages, size=total, replace=False)
    indptr = np.zeros(len(seq_lens) + 1, np.int32)
    np.cumsum(seq_lens, out=indptr[1:])
    indices = np.empty(total, np.int32)
    for i, (start, end) in enumerate(zip(indptr[:-1], indptr[1:])):
        indices[start:end] = np.sort(chosen[start:end])
    return indptr, indices


# ---------------------------------------------------------------------------
# Top-k / top-p sampling
# ---------------------------------------------------------------------------


def derive_sampling_target(
    p: np.ndarray, top_k: int | None = None, top_p: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth sampling distribution from probabilities and a mask rule.

    mask = the allowed token set: the top-k probabilities (ties broken toward
    the lower index) intersected with the minimal descending-probability
    prefix whose cumulative mass reaches top_p.  q = p restricted to the mask,
    renormalized.  Computed in float64.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ShapeMismatch(f"probability vector must be 1-d, got shape {p.shape}")
    if p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DegenerateDistribution("probabilities must be finite and non-negative")
    total = float(p.sum())
    if total == 0.0:
        raise DegenerateDistribution("probability vector has no mass")
    if abs(total - 1.0) > 1e-6:
        raise DegenerateDistribution(f"probabilities sum to {total!r}, not 1 (within 1e-6)")
    v = p.size
    if top_k is not None and top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    if top_p is not None and not 0 < top_p <= 1:
        raise ValueError(f"top_p must lie in (0, 1], got {top_p}")

    # descending by probability; stable sort of -p puts equal probabilities
    # in ascending index order, so ties break toward the lower index
    order = np.argsort(-p, kind="stable")
    mask = np.ones(v, dtype=bool)
    if top_k is not None and top_k < v:
        mask_k = np.zeros(v, dtype=bool)
        mask_k[order[:top_k]] = True
        mask &= mask_k
    if top_p is not None:
        cum = np.cumsum(p[order])
        # minimal prefix length whose cumulative mass reaches top_p; clamping
        # the threshold to the total keeps top_p = 1.0 robust to rounding
        threshold = min(float(top_p), float(cum[-1]))
        length = int(np.searchsorted(cum, threshold, side="left")) + 1
        mask_p = np.zeros(v, dtype=bool)
        mask_p[order[:length]] = True
        mask &= mask_p

    q = np.where(mask, p, 0.0)
    q /= q.sum()
    return mask, q


def sampling_core(
    p32: np.ndarray, top_k: int, top_p: float, seed: int
) -> np.ndarray:
    """One sampled token index per distribution row, int64.

    top_k <= 0 and top_p <= 0 are the 'disabled' sentinels for the scalar
    kernel inputs.  Sampling inverts the target CDF with Philox-keyed
    uniforms, one per row in row order — masked tokens have zero width and
    can never be drawn.
    """
    if p32.ndim != 2:
        raise ShapeMismatch(f"probs must be [batch, vocab], got {p32.shape}")
    k_eff = int(top_k) if top_k > 0 else None
    tp_eff = float(top_p) if top_p > 0 else None
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    uniforms = rng.random(p32.shape[0])
    tokens = np.empty(p32.shape[0], np.int64)
    for b in range(p32.shape[0]):
        mask, q = derive_sampling_target(p32[b], k_eff, tp_eff)
        cdf = np.cumsum(q)
        idx = int(np.searchsorted(cdf, uniforms[b], side="right"))
        if idx >= p32.shape[1] or not mask[idx]:
            # a uniform landing beyond the rounded CDF tail falls back to the
            # last allowed token — never to a masked one
            idx = int(np.nonzero(mask)[0][-1])
        tokens[b] = idx
    return tokens


def ref_sampling(probs: Tensor, top_k, top_p, seed) -> Tensor:
    tokens = sampling_core(
        _array_f32(probs, 2, "probs"),
        int(_scalar(top_k, "top_k")),
        _scalar(top_p, "top_p"),
        int(_scalar(seed, "seed")),
    )
    return Tensor(DType.I64, tokens)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

# op type -> (tensor-level arity, core adapter over ordered Tensor inputs)
_EVALUATORS: dict = {
    OpType.GEMM: (2, lambda a, b: (gemm_core(_array_f32(a, 2, "A"), _array_f32(b, 2, "B")),)),
    OpType.FUSED_ADD_RMSNORM: (
        4,
        lambda x, r, w, eps: fused_add_rmsnorm_core(
            _array_f32(x, 2, "x"),
            _array_f32(r, 2, "residual"),
            _array_f32(w, 1, "weight"),
            _scalar(eps, "eps"),
        ),
    ),
    OpType.GQA_PAGED_DECODE: (
        6,
        lambda q, k, v, ip, ix, s: gqa_paged_decode_core(
            _array_f32(q, 3, "q"),
            _array_f32(k, 4, "k_cache"),
            _array_f32(v, 4, "v_cache"),
            _array_int(ip, 1, "kv_indptr"),
            _array_int(ix, 1, "kv_indices"),
            _scalar(s, "sm_scale"),
        ),
    ),
    OpType.SAMPLING_TOP_K_TOP_P: (
        4,
        lambda p, k, tp, seed: (
            sampling_core(
                _array_f32(p, 2, "probs"),
                int(_scalar(k, "top_k")),
                _scalar(tp, "top_p"),
                int(_scalar(seed, "seed")),
            ),
        ),
    ),
}


def run_reference(d: DefinitionRecord, inputs: dict[str, Tensor]) -> dict[str, Tensor]:
    """Evaluate a definition's reference semantics on materialized inputs.

    Inputs are passed positionally in declaration order; outputs are quantized
    to the definition's declared dtypes and returned keyed by declared name.
    """
    entry = _EVALUATORS.get(d.op_type)
    if entry is None:
        raise UnsupportedOpType(f"no reference evaluator for op type {d.op_type!r}")
    arity, core = entry
    if len(d.inputs) != arity:
        raise SchemaError(
            "inputs", f"{d.op_type.value} takes {arity} inputs, definition declares {len(d.inputs)}"
        )
    try:
        ordered = [inputs[name] for name in d.inputs]
    except KeyError as exc:
        raise SchemaError("inputs", f"missing input {exc.args[0]!r}") from None
    raw = core(*ordered)
    if len(raw) != len(d.outputs):
        raise SchemaError(
            "outputs",
            f"{d.op_type.value} produces {len(raw)} outputs, definition declares {len(d.outputs)}",
        )
    outs: dict[str, Tensor] = {}
    for (name, spec), arr in zip(d.outputs.items(), raw):
        if spec.dtype.is_int:
            outs[name] = Tensor(spec.dtype, np.ascontiguousarray(arr, dtype=spec.dtype.storage))
        else:
            outs[name] = Tensor(spec.dtype, quantize(np.asarray(arr, dtype=np.float32), spec.dtype))
    return outs
