"""Six-hook pre/post-processing pipelines.

Three pipeline kinds share one lifecycle:

* BuiltinPipeline: declarative image steps compiled from the manifest,
  executed in-process (an empty step list is the identity pipeline).
* CallablePipeline: in-process hooks supplied as plain callables; used for
  instrumentation and simulated processing costs.
* ExternalPipeline: hosts a worker subprocess speaking the frame protocol
  over its standard streams.

Lifecycle: start() dispatches before_preprocess then before_postprocess once;
run_hook(preprocess|postprocess) runs once per inference; stop() dispatches
after_preprocess then after_postprocess and shuts the worker down. The two
lifecycle pairs never carry tensor data.
"""

from __future__ import annotations

import os
import queue
import select
import shlex
import subprocess
import threading
import time
from collections import Counter
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DegenerateCrop,
    HookContractError,
    PipelineStateError,
    ProtocolError,
    RangeError,
    RankError,
    ShapeMismatch,
    SizeMismatch,
    WorkerCrashed,
    WorkerLaunchError,
    ZeroRescale,
)
from .manifest import Manifest, StepSpec, build_ctx
from .tensor import (
    DATA_HOOKS,
    Ctx,
    ElementType,
    HookId,
    Tensor,
    decode_frame,
    encode_frame,
    layout_convert,
    read_frame,
)

Tensors = list[Tensor]


# --- built-in image steps (rank-3 HWC working layout) ---------------------------

def builtin_decode(
    raw: Tensor,
    dims: tuple[int, int, int] | None = None,
    color_layout: str = "RGB",
    element_type: ElementType = ElementType.uint8,
) -> Tensor:
    """Cast a raw HWC byte image to float32, normalizing channel order to RGB.

    ``raw`` is either already rank-3 HWC, or a rank-1 byte blob reshaped to
    the declared ``dims``. ``color_layout`` declares how the raw channels are
    stored; BGR input gets its channel axis reversed.
    """
    if raw.dtype not in (ElementType.uint8, ElementType.int8):
        raise SizeMismatch(f"decode expects uint8/int8 input, got {raw.dtype.name}")
    arr = raw.to_numpy()
    if raw.rank == 1:
        if dims is None:
            raise SizeMismatch("rank-1 raw data needs declared dimensions")
        h, w, c = dims
        if arr.size != h * w * c:
            raise SizeMismatch(f"raw byte count {arr.size} != {h}x{w}x{c}")
        arr = arr.reshape(h, w, c)
    elif raw.rank == 3:
        if dims is not None and tuple(raw.shape) != tuple(dims):
            raise SizeMismatch(f"raw shape {raw.shape} != declared {tuple(dims)}")
    else:
        raise SizeMismatch(f"decode expects rank 1 or 3, got rank {raw.rank}")
    out = arr.astype(np.float32)
    if color_layout == "BGR":
        out = out[:, :, ::-1]
    return Tensor.from_numpy(out)


def builtin_center_crop(t: Tensor, percentage: float) -> Tensor:
    """Keep the central percentage of each spatial axis (floor rounding)."""
    if t.rank != 3:
        raise RankError(f"center crop expects rank-3 HWC, got rank {t.rank}")
    if not (0 < percentage <= 100):
        raise RangeError(f"crop percentage must be in (0, 100], got {percentage}")
    h, w, _ = t.shape
    h2 = int(h * percentage / 100)
    w2 = int(w * percentage / 100)
    if h2 == 0 or w2 == 0:
        raise DegenerateCrop(f"{percentage}% of {h}x{w} is empty")
    top = (h - h2) // 2
    left = (w - w2) // 2
    return Tensor.from_numpy(t.to_numpy()[top : top + h2, left : left + w2, :])


def _resize_exact(arr: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers and border clamping."""
    h, w, _ = arr.shape
    src_y = np.clip((np.arange(th, dtype=np.float32) + 0.5) * (h / th) - 0.5, 0, h - 1)
    src_x = np.clip((np.arange(tw, dtype=np.float32) + 0.5) * (w / tw) - 0.5, 0, w - 1)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (src_y - y0).astype(np.float32)[:, None, None]
    wx = (src_x - x0).astype(np.float32)[None, :, None]
    a = arr[y0[:, None], x0[None, :], :]
    b = arr[y0[:, None], x1[None, :], :]
    c = arr[y1[:, None], x0[None, :], :]
    d = arr[y1[:, None], x1[None, :], :]
    top = a * (1 - wx) + b * wx
    bot = c * (1 - wx) + d * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def builtin_resize_bilinear(
    t: Tensor, target_h: int, target_w: int, keep_aspect_ratio: bool = False
) -> Tensor:
    """Bilinear resize; with keep_aspect_ratio the image is scaled to fit and
    zero-padded symmetrically to the target."""
    if t.rank != 3:
        raise RankError(f"resize expects rank-3 HWC, got rank {t.rank}")
    if target_h <= 0 or target_w <= 0:
        raise RangeError(f"resize targets must be positive, got {target_h}x{target_w}")
    h, w, c = t.shape
    arr = t.to_numpy().astype(np.float32)
    if not keep_aspect_ratio:
        if (h, w) == (target_h, target_w):
            return Tensor.from_numpy(arr)
        return Tensor.from_numpy(_resize_exact(arr, target_h, target_w))
    scale = min(target_h / h, target_w / w)
    h2 = max(1, int(h * scale))
    w2 = max(1, int(w * scale))
    inner = arr if (h2, w2) == (h, w) else _resize_exact(arr, h2, w2)
    if (h2, w2) == (target_h, target_w):
        return Tensor.from_numpy(inner)
    out = np.zeros((target_h, target_w, c), dtype=np.float32)
    top = (target_h - h2) // 2
    left = (target_w - w2) // 2
    out[top : top + h2, left : left + w2, :] = inner
    return Tensor.from_numpy(out)


def builtin_normalize(t: Tensor, mean: Sequence[float], rescale: float) -> Tensor:
    """Per-channel (x - mean) / rescale."""
    if t.rank != 3:
        raise RankError(f"normalize expects rank-3 HWC, got rank {t.rank}")
    if rescale == 0:
        raise ZeroRescale("rescale divisor must be non-zero")
    c = t.shape[2]
    if len(mean) != c:
        raise ShapeMismatch(f"mean has {len(mean)} entries for {c} channels")
    arr = t.to_numpy().astype(np.float32)
    out = (arr - np.asarray(mean, dtype=np.float32)) / np.float32(rescale)
    return Tensor.from_numpy(out.astype(np.float32))


def _sample_to_model_layout(t: Tensor, layout: str) -> Tensor:
    if layout == "NHWC":
        return t
    if t.rank != 3:
        raise RankError(f"layout step expects rank-3 HWC, got rank {t.rank}")
    batched = Tensor(t.dtype, (1,) + t.shape, t.data)
    converted = layout_convert(batched, "NHWC", "NCHW")
    return Tensor(converted.dtype, converted.shape[1:], converted.data)


def compile_steps(steps: Sequence[StepSpec]) -> list[Callable[[Tensor], Tensor]]:
    """Turn validated manifest steps into tensor transforms, in manifest order."""
    ops: list[Callable[[Tensor], Tensor]] = []
    for step in steps:
        p = step.params
        if step.name == "decode":
            layout = p.get("data_layout", "NHWC")
            color = p.get("color_layout", "RGB")
            et = ElementType.from_name(p.get("element_type", "uint8"))

            def op(t, _color=color, _et=et, _layout=layout):
                if _layout == "NCHW" and t.rank == 3:
                    t = Tensor.from_numpy(np.transpose(t.to_numpy(), (1, 2, 0)))
                return builtin_decode(t, color_layout=_color, element_type=_et)

        elif step.name == "crop":
            def op(t, _pct=float(p["percentage"])):
                return builtin_center_crop(t, _pct)

        elif step.name == "resize":
            dims = p["dimensions"]
            th, tw = (dims[1], dims[2]) if len(dims) == 3 else (dims[0], dims[1])
            keep = bool(p.get("keep_aspect_ratio", False))

            def op(t, _th=th, _tw=tw, _keep=keep):
                return builtin_resize_bilinear(t, _th, _tw, _keep)

        elif step.name == "mean":
            def op(t, _mean=tuple(p["values"])):
                return builtin_normalize(t, _mean, 1.0)

        elif step.name == "rescale":
            def op(t, _val=float(p["value"])):
                return builtin_normalize(t, (0.0,) * t.shape[2], _val)

        elif step.name == "layout":
            def op(t, _layout=p["value"]):
                return _sample_to_model_layout(t, _layout)

        else:
            raise ValueError(f"unknown step {step.name!r}")
        ops.append(op)
    return ops


# --- pipelines -------------------------------------------------------------------

_START_HOOKS = (HookId.before_preprocess, HookId.before_postprocess)
_STOP_HOOKS = (HookId.after_preprocess, HookId.after_postprocess)


class Pipeline:
    """Common lifecycle: start -> run_hook* -> stop, with hook accounting."""

    def __init__(self, ctx: Ctx | None = None):
        self.ctx: Ctx = dict(ctx or {})
        self.started = False
        self.hook_counts: Counter = Counter()
        self._lock = threading.Lock()

    def start(self) -> None:
        if self.started:
            raise PipelineStateError("pipeline already started")
        self._launch()
        self.started = True
        try:
            for hook in _START_HOOKS:
                self._dispatch(hook, None)
        except BaseException:
            self._shutdown()
            self.started = False
            raise

    def stop(self) -> None:
        if not self.started:
            self._require_stopped_ok()
            return
        try:
            for hook in _STOP_HOOKS:
                self._dispatch(hook, None)
        finally:
            self._shutdown()
            self.started = False

    def run_hook(self, hook: HookId, data: Tensors | None = None) -> Tensors | None:
        if not self.started:
            raise PipelineStateError("pipeline not started")
        hook = HookId(hook)
        if hook in DATA_HOOKS and data is None:
            raise HookContractError(f"{hook.name} requires tensor data")
        if hook not in DATA_HOOKS and data is not None:
            raise HookContractError(f"{hook.name} must not receive tensor data")
        return self._dispatch(hook, data)

    def _dispatch(self, hook: HookId, data: Tensors | None) -> Tensors | None:
        with self._lock:
            self.hook_counts[hook] += 1
            return self._invoke(hook, data)

    # overridden by subclasses
    def _launch(self) -> None:
        pass

    def _shutdown(self) -> None:
        pass

    def _require_stopped_ok(self) -> None:
        """Called when stop() hits a never-started pipeline; no-op by default."""

    def _invoke(self, hook: HookId, data: Tensors | None) -> Tensors | None:
        raise NotImplementedError


class BuiltinPipeline(Pipeline):
    """Applies compiled manifest steps on preprocess; postprocess is identity."""

    def __init__(self, steps: Sequence[StepSpec] = (), ctx: Ctx | None = None):
        super().__init__(ctx)
        self._ops = compile_steps(steps)

    def _invoke(self, hook, data):
        if hook is HookId.preprocess:
            out = []
            for t in data:
                for op in self._ops:
                    t = op(t)
                out.append(t)
            return out
        if hook is HookId.postprocess:
            return list(data)
        return None


class CallablePipeline(Pipeline):
    """In-process hooks given as callables of (ctx, tensors) -> tensors."""

    def __init__(self, hooks: dict[HookId, Callable] | None = None, ctx: Ctx | None = None):
        super().__init__(ctx)
        self._hooks = dict(hooks or {})

    def _invoke(self, hook, data):
        fn = self._hooks.get(hook)
        if hook in DATA_HOOKS:
            return list(fn(self.ctx, data)) if fn else list(data)
        if fn:
            fn(self.ctx, None)
        return None


class ExternalPipeline(Pipeline):
    """Hosts a worker subprocess exchanging frames over stdin/stdout.

    Strictly request-response: every dispatched hook sends one frame carrying
    the pipeline ctx and awaits exactly one reply echoing the hook id. The
    worker is expected to exit once its input stream closes.
    """

    def __init__(self, launch_command: str, ctx: Ctx | None = None, io_timeout_s: float = 30.0):
        super().__init__(ctx)
        self.launch_command = launch_command
        self.io_timeout_s = io_timeout_s
        self.lifecycle_responses: list[tuple[HookId, Ctx]] = []
        self._proc: subprocess.Popen | None = None
        self._frames: queue.Queue = queue.Queue()
        self._handshaken = False

    def _launch(self) -> None:
        argv = shlex.split(self.launch_command)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as e:
            raise WorkerLaunchError(f"cannot launch {self.launch_command!r}: {e}") from e
        # Non-blocking writes keep a stalled worker from hanging the harness.
        os.set_blocking(self._proc.stdin.fileno(), False)
        threading.Thread(
            target=self._read_loop, args=(self._proc.stdout,), daemon=True
        ).start()

    def _read_loop(self, stream) -> None:
        try:
            while True:
                frame = read_frame(stream)
                self._frames.put(frame)
                if frame is None:
                    return
        except Exception:
            self._frames.put(None)

    def _require_stopped_ok(self) -> None:
        raise PipelineStateError("external pipeline was never started")

    def _shutdown(self) -> None:
        proc = self._proc
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.wait(timeout=self.io_timeout_s)
        except Exception:
            proc.kill()
            proc.wait()
        self._proc = None

    def _send(self, request: bytes) -> None:
        fd = self._proc.stdin.fileno()
        deadline = time.monotonic() + self.io_timeout_s
        view = memoryview(request)
        while view:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise WorkerCrashed(f"worker stopped reading within {self.io_timeout_s}s")
            _, writable, _ = select.select([], [fd], [], remaining)
            if not writable:
                continue
            try:
                written = os.write(fd, view)
            except BlockingIOError:
                continue
            except OSError as e:
                raise WorkerCrashed(f"worker closed its input stream: {e}") from e
            view = view[written:]

    def _exchange(self, hook: HookId, data: Tensors | None) -> tuple[Tensors, Ctx]:
        request = encode_frame(list(data or []), self.ctx, hook)
        proc = self._proc
        self._send(request)
        try:
            frame = self._frames.get(timeout=self.io_timeout_s)
        except queue.Empty:
            raise WorkerCrashed(
                f"no response to {hook.name} within {self.io_timeout_s}s"
            ) from None
        if frame is None:
            code = proc.poll()
            raise WorkerCrashed(f"worker exited (status {code}) during {hook.name}")
        try:
            tensors, ctx, echoed = decode_frame(frame)
        except Exception as e:
            raise ProtocolError(f"undecodable response to {hook.name}: {e}") from e
        if echoed is not hook:
            raise ProtocolError(f"worker answered {echoed.name} to a {hook.name} request")
        if "error" in ctx:
            raise ProtocolError(f"worker reported: {ctx['error']}")
        return tensors, ctx

    def _invoke(self, hook, data):
        try:
            tensors, ctx = self._exchange(hook, data)
        except WorkerCrashed as e:
            if not self._handshaken:
                # The worker never answered anything: the launch itself failed.
                raise WorkerLaunchError(str(e)) from e
            raise
        self._handshaken = True
        if hook in DATA_HOOKS:
            return tensors
        self.lifecycle_responses.append((hook, ctx))
        return None


def pipeline_from_manifest(m: Manifest, io_timeout_s: float = 30.0) -> Pipeline:
    """Build the pipeline the manifest's processing definition asks for."""
    ctx = build_ctx(m)
    if m.processing.built_in is not None:
        return BuiltinPipeline(m.processing.built_in, ctx)
    return ExternalPipeline(m.processing.external.worker_launch, ctx, io_timeout_s)
