"""Plugin-side runtime shim: ``python3 -m kbench.plugin_rt <staged_dir>``.

Speaks the frame protocol on stdin/stdout and turns RUN frames into calls
of the staged kernel.  The kernel contract, for solution authors:

- ``entry_point`` names a file in the staged sandbox and a symbol it
  defines, as ``file.py::symbol``.
- The symbol is called with one keyword argument per input tensor, in the
  definition's declared order: zero-dim tensors arrive as Python scalars,
  everything else as a numpy array (f8e4m3 and bf16 arrive widened to
  float32; their narrow bytes exist only on the wire).  A bound axis value
  (say ``M=6``) is additionally passed when the kernel's signature names
  that axis or takes ``**kwargs``; tensor names win any collision.
- It must return a mapping from output name to array-like.  Returned
  float64 narrows to float32 on the wire; the engine re-quantizes every
  output to the definition's declared dtype before validation, so a kernel
  may compute low-precision outputs in float32.

The shim owns the real stdout for frames and redirects file descriptor 1
to stderr before any kernel code runs, so stray ``print`` calls inside
kernels land in the log instead of corrupting the frame stream.

Exit codes: 0 after BYE (clean); 1 if the engine vanished (EOF without
BYE); 3 if the frame stream itself is corrupt.
"""
from __future__ import annotations

import importlib.util
import inspect
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .dtypes import DType
from .errors import FrameError
from .protocol import (
    Frame,
    FrameType,
    decode_run,
    encode_error,
    encode_hello,
    encode_result,
    read_frame,
    write_frame,
)
from .tensor import Tensor

_DETAIL_CAP = 8192

_RESULT_DTYPES = {
    np.dtype(np.float16): DType.F16,
    np.dtype(np.float32): DType.F32,
    np.dtype(np.float64): DType.F32,   # narrowed; engine re-quantizes anyway
    np.dtype(np.int32): DType.I32,
    np.dtype(np.int64): DType.I64,
}


class _KernelError(Exception):
    """Internal: wraps a kernel failure with its phase for the ERROR frame."""

    def __init__(self, phase: str, detail: str):
        super().__init__(detail)
        self.phase = phase
        self.detail = detail[:_DETAIL_CAP]


def _resolve_entry(staged_dir: Path, entry_point: str, cache: dict, counter: list):
    if entry_point in cache:
        return cache[entry_point]
    if "::" not in entry_point:
        raise _KernelError("bootstrap", f"entry point {entry_point!r} is not file::symbol")
    file_part, symbol = entry_point.split("::", 1)
    rel = Path(file_part)
    if rel.is_absolute() or ".." in rel.parts:
        raise _KernelError("bootstrap", f"entry file {file_part!r} escapes the sandbox")
    path = staged_dir / rel
    if not path.is_file():
        raise _KernelError("bootstrap", f"entry file {file_part!r} is not staged")
    counter[0] += 1
    module_name = f"_kplugin_{counter[0]}_{rel.stem}"
    try:
        spec = importlib.util.spec_from_file_location(module_name, path)
        module = importlib.util.module_from_spec(spec)
        sys.modules[module_name] = module
        spec.loader.exec_module(module)
    except Exception:
        raise _KernelError("bootstrap", traceback.format_exc()) from None
    fn = getattr(module, symbol, None)
    if not callable(fn):
        raise _KernelError("bootstrap", f"{file_part!r} defines no callable {symbol!r}")
    cache[entry_point] = fn
    return fn


def _call_kwargs(fn, inputs: dict[str, Tensor], axes: dict[str, int]) -> dict:
    kwargs = {}
    for name, tensor in inputs.items():
        if tensor.data.ndim == 0:
            kwargs[name] = tensor.item()
        else:
            kwargs[name] = tensor.data
    try:
        params = inspect.signature(fn).parameters
        takes_any = any(p.kind is inspect.Parameter.VAR_KEYWORD for p in params.values())
    except (TypeError, ValueError):
        params, takes_any = {}, False
    for name, value in axes.items():
        if name not in kwargs and (takes_any or name in params):
            kwargs[name] = value
    return kwargs


def _to_outputs(result) -> dict[str, Tensor]:
    if not isinstance(result, dict):
        raise _KernelError(
            "run", f"kernel returned {type(result).__name__}, not a name->array mapping"
        )
    outputs: dict[str, Tensor] = {}
    for name, value in result.items():
        if not isinstance(name, str):
            raise _KernelError("run", f"output key {name!r} is not a string")
        arr = np.asarray(value)
        dtype = _RESULT_DTYPES.get(arr.dtype)
        if dtype is None:
            raise _KernelError(
                "run", f"output {name!r} has unsupported dtype {arr.dtype}"
            )
        outputs[name] = Tensor(dtype, arr.astype(dtype.storage, copy=False))
    return outputs


def _handle_run(frame: Frame, staged_dir: Path, cache: dict, counter: list) -> Frame:
    try:
        request = decode_run(frame)
    except FrameError as exc:
        return encode_error("run", f"undecodable RUN frame: {exc}")
    try:
        fn = _resolve_entry(staged_dir, request.entry_point, cache, counter)
        try:
            result = fn(**_call_kwargs(fn, request.inputs, request.axes))
        except Exception:
            raise _KernelError("run", traceback.format_exc()) from None
        return encode_result(_to_outputs(result))
    except _KernelError as exc:
        return encode_error(exc.phase, exc.detail)
    except FrameError as exc:  # result archive could not be encoded
        return encode_error("run", f"result encoding failed: {exc}")


def serve(staged_dir: Path, stdin, frame_out) -> int:
    """Protocol loop; returns the process exit code."""
    write_frame(frame_out, encode_hello({
        "language": "python",
        "runtime": f"python {sys.version.split()[0]}",
        "numpy": np.__version__,
        "pid": os.getpid(),
    }))
    cache: dict = {}
    counter = [0]
    while True:
        try:
            frame = read_frame(stdin)
        except FrameError as exc:
            print(f"plugin_rt: corrupt frame stream: {exc}", file=sys.stderr)
            return 3
        if frame is None:
            return 1
        if frame.type is FrameType.RUN:
            write_frame(frame_out, _handle_run(frame, staged_dir, cache, counter))
        elif frame.type is FrameType.PING:
            write_frame(frame_out, Frame(FrameType.PING))
        elif frame.type is FrameType.BYE:
            write_frame(frame_out, Frame(FrameType.BYE))
            return 0
        else:
            write_frame(frame_out, encode_error(
                "run", f"unexpected {frame.type.name} frame from the engine"
            ))


def main(argv: list[str]) -> int:
    if len(argv) != 2:
        print("usage: python3 -m kbench.plugin_rt <staged_dir>", file=sys.stderr)
        return 2
    staged_dir = Path(argv[1]).resolve()
    if not staged_dir.is_dir():
        print(f"plugin_rt: no staged directory {staged_dir}", file=sys.stderr)
        return 2

    # Claim fd 1 for frames, then point fd 1 at stderr so kernel prints
    # (even from extensions writing to the fd directly) cannot corrupt it.
    frame_fd = os.dup(1)
    os.dup2(2, 1)
    frame_out = os.fdopen(frame_fd, "wb")
    sys.stdout = sys.stderr

    os.chdir(staged_dir)
    sys.path.insert(0, str(staged_dir))
    try:
        return serve(staged_dir, sys.stdin.buffer, frame_out)
    finally:
        try:
            frame_out.flush()
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main(sys.argv))
