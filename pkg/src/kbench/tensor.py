"""In-memory tensor values with explicit element types.

A Tensor pairs a schema dtype with a numpy storage array.  For bf16/f8e4m3 the
storage is widened float32, but every element is required to sit on the target
format's value grid — the pair behaves like the narrow format with float32
arithmetic convenience.  Storage arrays are C-contiguous and read-only, so a
Tensor can be shared and hashed by content without defensive copies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtypes import DType, on_grid, quantize
from .errors import DTypeMismatch, ShapeMismatch


@dataclass(frozen=True)
class Tensor:
    dtype: DType
    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if arr.dtype != self.dtype.storage:
            raise DTypeMismatch(
                f"storage dtype {arr.dtype} does not match {self.dtype.value} "
                f"(expects {self.dtype.storage})"
            )
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if self.dtype.is_widened and not on_grid(arr, self.dtype):
            raise DTypeMismatch(
                f"values fall off the {self.dtype.value} grid"
            )
        arr = arr.view()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    # -- construction -----------------------------------------------------

    @classmethod
    def build(cls, values, dtype: DType) -> "Tensor":
        """Quantize arbitrary numeric values onto ``dtype`` and wrap them."""
        return cls(dtype, quantize(np.asarray(values), dtype))

    @classmethod
    def scalar(cls, value, dtype: DType) -> "Tensor":
        t = cls.build(value, dtype)
        if t.shape != ():
            raise ShapeMismatch(f"scalar expected, got shape {t.shape}")
        return t

    # -- views ------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self):
        """The sole element of a scalar tensor, as a python number."""
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on shape {self.shape}")
        return self.data.reshape(()).item()

    def __repr__(self) -> str:  # pragma: no cover - debugging nicety
        return f"Tensor({self.dtype.value}, shape={self.shape})"


def bitwise_equal(a: Tensor, b: Tensor) -> bool:
    """Exact equality: same dtype, same shape, identical storage bytes.

    NaNs compare equal to NaNs in the same position (byte comparison), which
    is what "bitwise" means here.
    """
    if a.dtype is not b.dtype or a.shape != b.shape:
        return False
    return a.data.tobytes() == b.data.tobytes()


def require(t: Tensor, dtype: DType, shape: tuple[int, ...]) -> Tensor:
    """Assert a tensor's declared dtype and shape; return it unchanged."""
    if t.dtype is not dtype:
        raise DTypeMismatch(f"expected {dtype.value}, got {t.dtype.value}")
    if t.shape != shape:
        raise ShapeMismatch(f"expected shape {shape}, got {t.shape}")
    return t
