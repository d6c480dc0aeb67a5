"""Length-prefixed frame protocol between the engine and kernel plugins.

This module is the authoritative wire specification; out-of-tree plugin
runtimes implement exactly what is written here.

Every frame is::

    [4 bytes]  u32 little-endian length L = 1 + len(payload)
    [1 byte ]  frame type
    [L-1 B  ]  payload

so a reader consumes 4 bytes, then L more, and the first of those is the
type.  Types and payloads:

    HELLO  = 1   plugin -> engine, once at startup.  UTF-8 JSON object with
                 free-form runtime facts ({"language": ..., "runtime": ...});
                 recorded in the evaluation's environment snapshot.
    RUN    = 2   engine -> plugin.  Tensor archive of the input tensors
                 (scalars are zero-dim entries), immediately followed by a
                 UTF-8 JSON trailer {"entry_point": "file.py::symbol",
                 "axes": {...}} — the archive is self-delimiting, so the
                 trailer is everything after its span.
    RESULT = 3   plugin -> engine.  Tensor archive of the output tensors.
    ERROR  = 4   plugin -> engine.  UTF-8 JSON {"phase": "bootstrap"|"run",
                 "detail": text}; "bootstrap" means the kernel never became
                 callable (import/resolution), "run" means it was called and
                 failed.
    PING   = 5   engine -> plugin, empty payload; the plugin echoes PING.
    BYE    = 6   engine -> plugin, empty payload; the plugin echoes BYE and
                 exits 0.  Nonzero exit is abnormal.

Payloads are capped at 1 GiB; a larger announced length is treated as a
corrupt stream, not an allocation request.
"""
from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

from .archive import archive_span, read_archive, write_archive
from .errors import FrameError
from .tensor import Tensor

MAX_PAYLOAD = 1 << 30
_LENGTH = struct.Struct("<I")


class FrameType(enum.IntEnum):
    HELLO = 1
    RUN = 2
    RESULT = 3
    ERROR = 4
    PING = 5
    BYE = 6


@dataclass(frozen=True)
class Frame:
    type: FrameType
    payload: bytes = b""


# ---------------------------------------------------------------------------
# byte-level codec
# ---------------------------------------------------------------------------


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise FrameError(f"payload of {len(frame.payload)} bytes exceeds the 1 GiB cap")
    return _LENGTH.pack(1 + len(frame.payload)) + bytes([frame.type]) + frame.payload


def decode_frame(data: bytes) -> tuple[Frame, int]:
    """Decode one frame from the head of ``data``; return (frame, bytes used)."""
    if len(data) < _LENGTH.size:
        raise FrameError("buffer shorter than the 4-byte length prefix")
    (length,) = _LENGTH.unpack_from(data)
    if length < 1:
        raise FrameError("frame length must cover at least the type byte")
    if length - 1 > MAX_PAYLOAD:
        raise FrameError(f"announced payload of {length - 1} bytes exceeds the 1 GiB cap")
    if len(data) < _LENGTH.size + length:
        raise FrameError(f"frame announces {length} bytes but only "
                         f"{len(data) - _LENGTH.size} follow")
    type_byte = data[_LENGTH.size]
    try:
        frame_type = FrameType(type_byte)
    except ValueError:
        raise FrameError(f"unknown frame type {type_byte}") from None
    payload = data[_LENGTH.size + 1:_LENGTH.size + length]
    return Frame(frame_type, payload), _LENGTH.size + length


# ---------------------------------------------------------------------------
# stream I/O
# ---------------------------------------------------------------------------


def write_frame(stream: BinaryIO, frame: Frame) -> None:
    stream.write(encode_frame(frame))
    stream.flush()


def _read_exactly(stream: BinaryIO, n: int, context: str) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise FrameError(f"stream ended {remaining} bytes short of {context}")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> Frame | None:
    """Read one frame; ``None`` on clean end-of-stream at a frame boundary."""
    prefix = stream.read(_LENGTH.size)
    if not prefix:
        return None
    if len(prefix) < _LENGTH.size:
        prefix += _read_exactly(stream, _LENGTH.size - len(prefix), "the length prefix")
    (length,) = _LENGTH.unpack(prefix)
    if length < 1:
        raise FrameError("frame length must cover at least the type byte")
    if length - 1 > MAX_PAYLOAD:
        raise FrameError(f"announced payload of {length - 1} bytes exceeds the 1 GiB cap")
    body = _read_exactly(stream, length, "the announced frame body")
    frame, used = decode_frame(prefix + body)
    assert used == _LENGTH.size + length
    return frame


# ---------------------------------------------------------------------------
# typed payloads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRequest:
    """One kernel invocation: tensors by name plus call metadata."""
    inputs: dict[str, Tensor]
    entry_point: str
    axes: dict[str, int] = field(default_factory=dict)


def encode_hello(info: dict) -> Frame:
    return Frame(FrameType.HELLO, json.dumps(info, sort_keys=True).encode("utf-8"))


def decode_hello(frame: Frame) -> dict:
    _expect(frame, FrameType.HELLO)
    info = _json_payload(frame, "HELLO")
    if not isinstance(info, dict):
        raise FrameError("HELLO payload must be a JSON object")
    return info


def encode_run(request: RunRequest) -> Frame:
    trailer = {"entry_point": request.entry_point, "axes": request.axes}
    payload = write_archive(request.inputs) + json.dumps(
        trailer, sort_keys=True
    ).encode("utf-8")
    return Frame(FrameType.RUN, payload)


def decode_run(frame: Frame) -> RunRequest:
    _expect(frame, FrameType.RUN)
    try:
        span = archive_span(frame.payload)
        inputs = read_archive(frame.payload[:span])
    except Exception as exc:
        raise FrameError(f"RUN archive: {exc}") from exc
    try:
        trailer = json.loads(frame.payload[span:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"RUN trailer is not valid JSON: {exc}") from exc
    if not isinstance(trailer, dict) or not isinstance(trailer.get("entry_point"), str):
        raise FrameError("RUN trailer must be an object with an entry_point string")
    axes = trailer.get("axes", {})
    if not isinstance(axes, dict) or not all(
        isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool)
        for k, v in axes.items()
    ):
        raise FrameError("RUN trailer axes must map names to integers")
    return RunRequest(inputs, trailer["entry_point"], dict(axes))


def encode_result(outputs: dict[str, Tensor]) -> Frame:
    return Frame(FrameType.RESULT, write_archive(outputs))


def decode_result(frame: Frame) -> dict[str, Tensor]:
    _expect(frame, FrameType.RESULT)
    try:
        return read_archive(frame.payload)
    except Exception as exc:
        raise FrameError(f"RESULT archive: {exc}") from exc


def encode_error(phase: str, detail: str) -> Frame:
    if phase not in ("bootstrap", "run"):
        raise ValueError(f"phase must be 'bootstrap' or 'run', not {phase!r}")
    payload = json.dumps({"phase": phase, "detail": detail}, sort_keys=True)
    return Frame(FrameType.ERROR, payload.encode("utf-8"))


def decode_error(frame: Frame) -> tuple[str, str]:
    _expect(frame, FrameType.ERROR)
    body = _json_payload(frame, "ERROR")
    if (
        not isinstance(body, dict)
        or body.get("phase") not in ("bootstrap", "run")
        or not isinstance(body.get("detail"), str)
    ):
        raise FrameError("ERROR payload must be {'phase': 'bootstrap'|'run', 'detail': str}")
    return body["phase"], body["detail"]


def _expect(frame: Frame, expected: FrameType) -> None:
    if frame.type is not expected:
        raise FrameError(f"expected {expected.name} frame, got {frame.type.name}")


def _json_payload(frame: Frame, label: str):
    try:
        return json.loads(frame.payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"{label} payload is not valid JSON: {exc}") from exc
