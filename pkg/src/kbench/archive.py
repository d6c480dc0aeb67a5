"""Tensor archive container: named tensors in one contiguous byte buffer.

Layout (all little-endian), byte-compatible with the safetensors container:

    [8 bytes]  u64 header length N
    [N bytes]  JSON header: {"name": {"dtype": "F16", "shape": [6, 2048],
               "data_offsets": [begin, end]}, ...}
    [  ...  ]  raw tensor payloads, offsets relative to the end of the header

Dtype names in headers use the wire spelling (F32/F16/BF16/F8_E4M3/I32/I64);
payload bytes are the narrow wire format even for widened in-memory storage.
An optional "__metadata__" entry (string map) is tolerated and ignored on
read, so third-party dumps load directly.  The writer pads the header with
trailing spaces to 8-byte alignment, matching the reference implementation.

Reading is strict about structure: malformed headers raise CorruptHeader and
payloads shorter than the header claims raise TruncatedPayload, so a corrupt
file never produces silently wrong tensors.
"""
from __future__ import annotations

import json
from pathlib import Path

from .dtypes import DType, decode_wire, encode_wire, parse_dtype
from .errors import ArchiveMissingKey, CorruptHeader, DTypeMismatch, TruncatedPayload
from .tensor import Tensor

_HEADER_LEN_BYTES = 8
_MAX_HEADER = 100 * 1024 * 1024


def write_archive(tensors: dict[str, Tensor]) -> bytes:
    """Serialize named tensors; key order is preserved in the header."""
    header: dict[str, dict] = {}
    payloads: list[bytes] = []
    offset = 0
    for name, tensor in tensors.items():
        raw = encode_wire(tensor.data, tensor.dtype)
        header[name] = {
            "dtype": tensor.dtype.wire_name,
            "shape": list(tensor.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        payloads.append(raw)
        offset += len(raw)
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    pad = (-(_HEADER_LEN_BYTES + len(head))) % 8
    head += b" " * pad
    return len(head).to_bytes(8, "little") + head + b"".join(payloads)


def _parse_header(data: bytes) -> tuple[dict, int]:
    """Validate and parse the header; return (entries, payload_start)."""
    if len(data) < _HEADER_LEN_BYTES:
        raise CorruptHeader("buffer shorter than the 8-byte header length")
    n = int.from_bytes(data[:_HEADER_LEN_BYTES], "little")
    if n > _MAX_HEADER:
        raise CorruptHeader(f"header length {n} exceeds the {_MAX_HEADER}-byte cap")
    if len(data) < _HEADER_LEN_BYTES + n:
        raise CorruptHeader(f"header length {n} overruns the {len(data)}-byte buffer")
    raw = data[_HEADER_LEN_BYTES:_HEADER_LEN_BYTES + n]

    def no_duplicates(pairs):
        d = {}
        for key, value in pairs:
            if key in d:
                raise CorruptHeader(f"duplicate tensor name {key!r}")
            d[key] = value
        return d

    try:
        entries = json.loads(raw.decode("utf-8"), object_pairs_hook=no_duplicates)
    except CorruptHeader:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(entries, dict):
        raise CorruptHeader("header must be a JSON object")
    return entries, _HEADER_LEN_BYTES + n


def read_archive(data: bytes) -> dict[str, Tensor]:
    """Deserialize an archive buffer into named tensors, header order."""
    entries, payload_start = _parse_header(data)
    available = len(data) - payload_start
    out: dict[str, Tensor] = {}
    for name, entry in entries.items():
        if name == "__metadata__":
            continue
        if not isinstance(entry, dict):
            raise CorruptHeader(f"{name}: entry must be an object")
        try:
            dtype = parse_dtype(entry["dtype"])
        except KeyError:
            raise CorruptHeader(f"{name}: missing dtype") from None
        except DTypeMismatch as exc:
            raise CorruptHeader(f"{name}: {exc}") from None
        shape = entry.get("shape")
        if not isinstance(shape, list) or not all(
            isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in shape
        ):
            raise CorruptHeader(f"{name}: shape must be a list of non-negative ints")
        offsets = entry.get("data_offsets")
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) and not isinstance(o, bool) and o >= 0 for o in offsets)
            or offsets[0] > offsets[1]
        ):
            raise CorruptHeader(f"{name}: data_offsets must be an ordered [begin, end] pair")
        begin, end = offsets
        count = 1
        for dim in shape:
            count *= dim
        if end - begin != count * dtype.itemsize:
            raise CorruptHeader(
                f"{name}: span {end - begin} bytes does not match "
                f"shape {shape} of {dtype.wire_name}"
            )
        if end > available:
            raise TruncatedPayload(
                f"{name}: payload needs byte {end}, buffer has {available}"
            )
        raw = data[payload_start + begin:payload_start + end]
        out[name] = Tensor(dtype, decode_wire(raw, dtype, tuple(shape)))
    return out


def archive_span(data: bytes) -> int:
    """Total byte length of the archive at the start of ``data``.

    Lets a larger message embed an archive followed by a trailer: the span is
    header plus the furthest data_offsets end (0 for an empty archive).
    """
    entries, payload_start = _parse_header(data)
    end = 0
    for name, entry in entries.items():
        if name == "__metadata__" or not isinstance(entry, dict):
            continue
        offsets = entry.get("data_offsets")
        if isinstance(offsets, list) and len(offsets) == 2 and isinstance(offsets[1], int):
            end = max(end, offsets[1])
    span = payload_start + end
    if span > len(data):
        raise TruncatedPayload(f"archive needs {span} bytes, buffer has {len(data)}")
    return span


def load_archive_file(path: str | Path) -> dict[str, Tensor]:
    return read_archive(Path(path).read_bytes())


def save_archive_file(path: str | Path, tensors: dict[str, Tensor]) -> None:
    Path(path).write_bytes(write_archive(tensors))


def archive_tensor(archive: dict[str, Tensor], key: str) -> Tensor:
    """Fetch one tensor, raising ArchiveMissingKey with the known keys listed."""
    try:
        return archive[key]
    except KeyError:
        known = ", ".join(sorted(archive)) or "<empty>"
        raise ArchiveMissingKey(f"no tensor {key!r} (archive holds: {known})") from None
