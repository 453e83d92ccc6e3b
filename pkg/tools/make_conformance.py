"""Regenerate the checked-in frame-protocol conformance vectors.

Each vector is a pair of files: NN.req.bin (a request frame) and NN.resp.bin
(the reply an identity worker must produce: hook echoed, tensors echoed on
data hooks only, empty ctx). Vectors deliberately avoid after_postprocess,
whose replies may carry worker-specific counter metadata.

Run from the repository root:  python3 tools/make_conformance.py
"""

from pathlib import Path

import numpy as np

from infbench.tensor import DATA_HOOKS, ElementType, HookId, Tensor, encode_frame

OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "data" / "conformance"


def vectors():
    f32 = Tensor.from_numpy(np.array([1.0], dtype=np.float32))
    yield [], {"model_name": "conformance"}, HookId.before_preprocess
    yield [f32], {}, HookId.preprocess
    yield [Tensor.from_numpy(np.arange(6, dtype=np.uint8).reshape(2, 3))], {}, HookId.preprocess
    yield [Tensor.from_numpy(np.array([-128, -1, 127], dtype=np.int8))], {}, HookId.preprocess
    yield [Tensor.from_numpy(np.array([[2**31 - 1], [-(2**31)]], dtype=np.int32))], {}, HookId.preprocess
    yield [Tensor.from_numpy(np.array([2**63 - 1, -(2**63)], dtype=np.int64))], {}, HookId.preprocess
    yield [Tensor.from_numpy(np.array([0.5, -0.5, float("inf")], dtype=np.float64))], {}, HookId.preprocess
    yield [Tensor.from_strings(["ab", "", "héllo"])], {}, HookId.preprocess
    yield (
        [Tensor.from_numpy(np.zeros((2, 2), dtype=np.float32)),
         Tensor.from_strings(["x"]),
         Tensor.from_numpy(np.array(7, dtype=np.int64).reshape(()))],
        {"mean": "127.5,127.5,127.5", "rescale": "127.5"},
        HookId.postprocess,
    )
    yield [Tensor.from_numpy(np.array(3.25, dtype=np.float32).reshape(()))], {}, HookId.preprocess
    yield [Tensor(ElementType.int32, (0, 5), b"")], {}, HookId.preprocess
    yield [], {}, HookId.after_preprocess
    yield [], {"note": "pre-run"}, HookId.before_postprocess


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for old in OUT_DIR.glob("*.bin"):
        old.unlink()
    for i, (tensors, ctx, hook) in enumerate(vectors()):
        request = encode_frame(tensors, ctx, hook)
        reply_tensors = tensors if hook in DATA_HOOKS else []
        response = encode_frame(reply_tensors, {}, hook)
        (OUT_DIR / f"{i:02d}.req.bin").write_bytes(request)
        (OUT_DIR / f"{i:02d}.resp.bin").write_bytes(response)
    print(f"wrote {i + 1} vector pairs to {OUT_DIR}")


if __name__ == "__main__":
    main()
