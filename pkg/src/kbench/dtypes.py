"""Element types for kernel tensors, with software emulation of low precision.

The schema speaks six element types.  f32/f16/i32/i64 map directly onto numpy.
bf16 and f8e4m3 have no numpy storage type, so they are *emulated*: values are
stored widened to float32 but constrained to the target format's value grid.
Quantization is round-to-nearest-even with saturation at the format's largest
finite magnitude (infinite inputs saturate too; NaN stays NaN).  f8e4m3 is the
no-infinity variant: 4 exponent bits, 3 mantissa bits, exponent bias 7, max
finite 448, NaN encoded as 0x7F/0xFF.

Each type knows three spellings:

- ``name``      short internal name ("bf16"), also the enum value
- ``json_name`` long name used in schema documents ("bfloat16")
- ``wire_name`` name used in tensor-archive headers ("BF16")

``parse_dtype`` accepts any of the three.
"""
from __future__ import annotations

import enum

import numpy as np

from .errors import DTypeMismatch


class DType(enum.Enum):
    F32 = "f32"
    F16 = "f16"
    BF16 = "bf16"
    F8E4M3 = "f8e4m3"
    I32 = "i32"
    I64 = "i64"

    @property
    def json_name(self) -> str:
        return _JSON_NAMES[self]

    @property
    def wire_name(self) -> str:
        return _WIRE_NAMES[self]

    @property
    def itemsize(self) -> int:
        """Bytes per element on the wire (not in widened storage)."""
        return _ITEMSIZES[self]

    @property
    def storage(self) -> np.dtype:
        """The numpy dtype used to hold values in memory."""
        return _STORAGE[self]

    @property
    def is_float(self) -> bool:
        return self in (DType.F32, DType.F16, DType.BF16, DType.F8E4M3)

    @property
    def is_int(self) -> bool:
        return self in (DType.I32, DType.I64)

    @property
    def is_widened(self) -> bool:
        """True when in-memory storage is wider than the wire format."""
        return self in (DType.BF16, DType.F8E4M3)

    def __repr__(self) -> str:  # pragma: no cover - debugging nicety
        return f"DType.{self.name}"


_JSON_NAMES = {
    DType.F32: "float32",
    DType.F16: "float16",
    DType.BF16: "bfloat16",
    DType.F8E4M3: "float8_e4m3",
    DType.I32: "int32",
    DType.I64: "int64",
}

_WIRE_NAMES = {
    DType.F32: "F32",
    DType.F16: "F16",
    DType.BF16: "BF16",
    DType.F8E4M3: "F8_E4M3",
    DType.I32: "I32",
    DType.I64: "I64",
}

_ITEMSIZES = {
    DType.F32: 4,
    DType.F16: 2,
    DType.BF16: 2,
    DType.F8E4M3: 1,
    DType.I32: 4,
    DType.I64: 8,
}

_STORAGE = {
    DType.F32: np.dtype(np.float32),
    DType.F16: np.dtype(np.float16),
    DType.BF16: np.dtype(np.float32),
    DType.F8E4M3: np.dtype(np.float32),
    DType.I32: np.dtype(np.int32),
    DType.I64: np.dtype(np.int64),
}

_BY_ANY_NAME: dict[str, DType] = {}
for _dt in DType:
    _BY_ANY_NAME[_dt.value] = _dt
    _BY_ANY_NAME[_dt.json_name] = _dt
    _BY_ANY_NAME[_dt.wire_name] = _dt


def parse_dtype(name: str) -> DType:
    """Resolve any accepted dtype spelling; raise DTypeMismatch otherwise."""
    try:
        return _BY_ANY_NAME[name]
    except KeyError:
        raise DTypeMismatch(f"unknown dtype name {name!r}") from None


# ---------------------------------------------------------------------------
# Format constants
# ---------------------------------------------------------------------------

F16_MAX = 65504.0
BF16_MAX = float(np.uint32(0x7F7F0000).view(np.float32))  # 3.3895314e38
F8E4M3_MAX = 448.0


def _build_f8_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Enumerate all 256 f8e4m3 encodings.

    Returns (decode, positive_grid, midpoints, code_of_grid):
    - decode[byte] -> float32 value (NaN for 0x7F/0xFF)
    - positive_grid: the 127 non-negative finite values, ascending (0 first)
    - midpoints: the 126 exact midpoints between consecutive grid values
    - code_of_grid[i]: the byte encoding grid value i with sign bit clear
    """
    decode = np.empty(256, dtype=np.float32)
    positive: list[tuple[float, int]] = []
    for byte in range(256):
        sign = -1.0 if byte & 0x80 else 1.0
        exp = (byte >> 3) & 0xF
        man = byte & 0x7
        if exp == 0xF and man == 0x7:
            decode[byte] = np.nan
            continue
        if exp == 0:
            value = sign * (man / 8.0) * 2.0 ** (-6)
        else:
            value = sign * (1.0 + man / 8.0) * 2.0 ** (exp - 7)
        decode[byte] = np.float32(value)
        if sign > 0:
            positive.append((value, byte))
    positive.sort()
    grid = np.array([v for v, _ in positive], dtype=np.float64)
    codes = np.array([b for _, b in positive], dtype=np.uint8)
    mids = (grid[:-1] + grid[1:]) / 2.0  # dyadic values: exact in float64
    return decode, grid, mids, codes


_F8_DECODE, _F8_GRID, _F8_MIDS, _F8_CODES = _build_f8_tables()
# A grid value's mantissa code is even when its low bit is clear; ties at an
# exact midpoint round to the neighbor with the even mantissa.
_F8_EVEN = (_F8_CODES & 1) == 0


# ---------------------------------------------------------------------------
# Quantizers
# ---------------------------------------------------------------------------

def quantize_f16(x: np.ndarray) -> np.ndarray:
    """Round float values to the f16 grid, returning float16 storage.

    numpy's astype overflows to inf above 65519.998; the contract is saturate
    to the max finite magnitude instead, so clip first (NaN passes through).
    """
    x64 = np.asarray(x, dtype=np.float64)
    clipped = np.clip(x64, -F16_MAX, F16_MAX)
    return clipped.astype(np.float16)


def quantize_bf16(x: np.ndarray) -> np.ndarray:
    """Round float values to the bf16 grid, returning widened float32 storage.

    Round-to-nearest-even via the carry-bias trick on the raw float32 bits;
    results that round up to the infinity encoding saturate to the max finite
    bf16 value.  NaN stays NaN (the bias never carries out of a NaN payload's
    exponent).
    """
    x32 = np.asarray(x, dtype=np.float32)
    bits = x32.view(np.uint32) if x32.flags.c_contiguous else np.ascontiguousarray(x32).view(np.uint32)
    bits = bits.astype(np.uint64)
    rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) & 0xFFFF0000
    out = rounded.astype(np.uint32).view(np.float32)
    overflow = np.isinf(out) & ~np.isnan(x32)
    if overflow.any():
        out = np.where(overflow, np.copysign(np.float32(BF16_MAX), x32), out)
    return out.reshape(x32.shape)


def quantize_f8e4m3(x: np.ndarray) -> np.ndarray:
    """Round float values to the f8e4m3 grid, returning widened float32 storage.

    Nearest grid value; exact midpoints round to the even-mantissa neighbor;
    magnitudes above 448 (infinity included) saturate to ±448; NaN stays NaN.
    """
    x32 = np.asarray(x, dtype=np.float32)
    a = np.abs(x32).astype(np.float64)
    lo = np.searchsorted(_F8_MIDS, a, side="left")
    hi = np.searchsorted(_F8_MIDS, a, side="right")
    idx = lo
    tie = lo != hi
    if tie.any():
        idx = lo.copy()
        idx[tie] = np.where(_F8_EVEN[lo[tie]], lo[tie], hi[tie])
    idx = np.minimum(idx, len(_F8_GRID) - 1)
    out = np.copysign(_F8_GRID[idx], x32).astype(np.float32)
    nan = np.isnan(x32)
    if nan.any():
        out = np.where(nan, np.float32(np.nan), out)
    return out.reshape(x32.shape)


def quantize(x: np.ndarray, dtype: DType) -> np.ndarray:
    """Round ``x`` onto ``dtype``'s value grid, in that dtype's storage type.

    Float targets use round-to-nearest-even with saturation; integer targets
    truncate toward zero (C cast semantics) — integer inputs pass through
    exactly.
    """
    if dtype is DType.F32:
        return np.asarray(x, dtype=np.float64).astype(np.float32)
    if dtype is DType.F16:
        return quantize_f16(x)
    if dtype is DType.BF16:
        return quantize_bf16(x)
    if dtype is DType.F8E4M3:
        return quantize_f8e4m3(x)
    return np.asarray(x).astype(dtype.storage)


def on_grid(x: np.ndarray, dtype: DType) -> bool:
    """True when every element of ``x`` is representable in ``dtype``.

    NaN elements count as on-grid for NaN-capable formats (all float targets);
    comparison treats NaN == NaN as a match.
    """
    arr = np.asarray(x)
    if dtype.is_int:
        return arr.dtype == dtype.storage
    q = quantize(arr, dtype)
    same = (q == arr.astype(q.dtype)) | (np.isnan(q) & np.isnan(arr))
    return bool(same.all())


# ---------------------------------------------------------------------------
# Wire <-> storage codecs (used by the tensor archive)
# ---------------------------------------------------------------------------

def encode_wire(x: np.ndarray, dtype: DType) -> bytes:
    """Serialize storage values to little-endian wire bytes."""
    arr = np.ascontiguousarray(x)
    if dtype is DType.BF16:
        bits = arr.astype(np.float32).view(np.uint32)
        return (bits >> 16).astype("<u2").tobytes()
    if dtype is DType.F8E4M3:
        a = np.abs(arr.astype(np.float64))
        idx = np.searchsorted(_F8_GRID, a.ravel())
        idx = np.minimum(idx, len(_F8_GRID) - 1)
        codes = _F8_CODES[idx]
        sign = (np.signbit(arr.astype(np.float32)).ravel()).astype(np.uint8) << 7
        codes = codes | sign
        nan = np.isnan(arr).ravel()
        if nan.any():
            codes = np.where(nan, np.uint8(0x7F), codes)
        return codes.astype(np.uint8).tobytes()
    return arr.astype(dtype.storage.newbyteorder("<")).tobytes()


def decode_wire(raw: bytes, dtype: DType, shape: tuple[int, ...]) -> np.ndarray:
    """Deserialize little-endian wire bytes into storage values."""
    count = 1
    for dim in shape:
        count *= dim
    if dtype is DType.BF16:
        bits = np.frombuffer(raw, dtype="<u2", count=count).astype(np.uint32) << 16
        return bits.view(np.float32).reshape(shape)
    if dtype is DType.F8E4M3:
        codes = np.frombuffer(raw, dtype=np.uint8, count=count)
        return _F8_DECODE[codes].reshape(shape).copy()
    arr = np.frombuffer(raw, dtype=dtype.storage.newbyteorder("<"), count=count)
    return arr.astype(dtype.storage).reshape(shape)
