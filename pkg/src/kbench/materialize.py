"""Turning workload input specs into concrete tensors.

Materialization is a pure function of (spec, shape, dtype, seed_base, name):

- ``random``: float dtypes draw standard normals, integer dtypes draw
  uniformly from [0, 8) (small so index-like values stay plausible; real
  index tensors should come from archives or the workload generators).  The
  generator is counter-based and keyed by hash(seed, input name), so any
  process reproduces the same tensor without shared RNG state.  A spec-level
  seed overrides the caller's seed_base for that input.
- ``archive``: exact stored bytes from a tensor-archive file; the path
  resolves relative to ``root`` when relative.
- ``scalar``: the literal value, quantized onto the target dtype's grid.
"""
from __future__ import annotations

from pathlib import Path

from .archive import archive_tensor, load_archive_file
from .dtypes import DType, quantize
from .errors import DTypeMismatch, ShapeMismatch
from .rng import input_generator
from .tensor import Tensor
from .trace import InputSpec


def materialize_workload(
    d,
    w,
    bound,
    seed_base: int = 0,
    root: str | Path | None = None,
) -> dict[str, Tensor]:
    """Materialize every declared input of ``d`` for workload ``w`` and check
    the deferred (tensor-indexing) constraints against the concrete values."""
    from .trace import check_deferred  # local import: trace must not depend on us

    tensors = {
        name: materialize_input(
            w.inputs[name], bound.inputs[name], d.inputs[name].dtype,
            seed_base, name, root=root,
        )
        for name in d.inputs
    }
    check_deferred(bound, tensors)
    return tensors


def materialize_input(
    spec: InputSpec,
    shape: tuple[int, ...],
    dtype: DType,
    seed_base: int,
    input_name: str,
    root: str | Path | None = None,
) -> Tensor:
    if spec.kind == "random":
        seed = spec.seed if spec.seed is not None else seed_base
        gen = input_generator(seed, input_name)
        if dtype.is_float:
            values = gen.standard_normal(size=shape, dtype="float32")
        else:
            values = gen.integers(0, 8, size=shape)
        return Tensor(dtype, quantize(values, dtype))

    if spec.kind == "archive":
        path = Path(spec.path)
        if root is not None and not path.is_absolute():
            path = Path(root) / path
        tensor = archive_tensor(load_archive_file(path), spec.tensor_key)
        if tensor.dtype is not dtype:
            raise DTypeMismatch(
                f"{input_name}: archive holds {tensor.dtype.value}, declaration wants {dtype.value}"
            )
        if tensor.shape != shape:
            raise ShapeMismatch(
                f"{input_name}: archive shape {tensor.shape}, declaration wants {shape}"
            )
        return tensor

    # scalar
    if shape != ():
        raise ShapeMismatch(f"{input_name}: scalar spec for non-scalar shape {shape}")
    return Tensor.scalar(spec.value, dtype)
