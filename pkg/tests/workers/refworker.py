"""Test worker speaking the frame protocol over stdin/stdout.

Profiles select behaviors the pipeline host tests need:

  identity  echo tensors on data hooks
  count     identity + hook counters and call order in lifecycle replies
  stack     postprocess stacks its input tensors along a new first axis
  crash     exit abruptly on the first preprocess request
  hang      sleep 60s before answering preprocess
  badhook   answer every request with the wrong hook id
"""

import argparse
import sys
import time
from collections import Counter

import numpy as np

from infbench.tensor import (
    DATA_HOOKS,
    HookId,
    Tensor,
    decode_frame,
    encode_frame,
    read_frame,
)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--profile", default="identity")
    profile = parser.parse_args().profile

    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    counts: Counter = Counter()
    order: list[int] = []

    while True:
        frame = read_frame(stdin)
        if frame is None:
            return 0
        tensors, ctx, hook = decode_frame(frame)
        counts[hook] += 1
        order.append(int(hook))

        if profile == "crash" and hook is HookId.preprocess:
            return 1
        if profile == "hang" and hook is HookId.preprocess:
            time.sleep(60)

        reply_ctx = {}
        if profile == "count" and hook not in DATA_HOOKS:
            reply_ctx = {f"n_{h.name}": str(counts[h]) for h in HookId}
            reply_ctx["hook_order"] = ",".join(str(h) for h in order)

        if hook in DATA_HOOKS:
            if profile == "stack" and hook is HookId.postprocess:
                stacked = np.stack([t.to_numpy() for t in tensors])
                reply_tensors = [Tensor.from_numpy(stacked)]
            else:
                reply_tensors = tensors
        else:
            reply_tensors = []

        reply_hook = HookId((hook + 1) % 6) if profile == "badhook" else hook
        stdout.write(encode_frame(reply_tensors, reply_ctx, reply_hook))
        stdout.flush()


if __name__ == "__main__":
    sys.exit(main())
