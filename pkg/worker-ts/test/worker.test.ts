import { spawnSync } from "node:child_process";
import { readFileSync, readdirSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import { describe, expect, it } from "vitest";

import {
  Ctx,
  ElementType,
  HookId,
  Tensor,
  decodeFrame,
  encodeFrame,
} from "../src/frames.js";
import { WorkerState } from "../src/worker.js";
import { applyProfile } from "../src/profiles.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const CONFORMANCE_DIR = join(HERE, "..", "..", "tests", "data", "conformance");
const WORKER_JS = join(HERE, "..", "dist", "worker.js");

function f32(values: number[], shape?: number[]): Tensor {
  const data = Buffer.alloc(values.length * 4);
  values.forEach((v, i) => data.writeFloatLE(v, i * 4));
  return { dtype: ElementType.float32, shape: shape ?? [values.length], data };
}

describe("profiles", () => {
  it("identity echoes tensors", () => {
    const t = f32([1, 2, 3]);
    expect(applyProfile("identity", HookId.preprocess, [t], new Map())).toEqual([t]);
  });

  it("normalize applies (x - mean) / rescale from ctx", () => {
    const ctx: Ctx = new Map([["mean", "127.5,127.5,127.5"], ["rescale", "127.5"]]);
    const t = f32([255, 255, 255, 0, 0, 0], [2, 3]);
    const [out] = applyProfile("normalize", HookId.preprocess, [t], ctx);
    if (out.dtype === ElementType.string) throw new Error("unexpected");
    const values = Array.from({ length: 6 }, (_, i) => out.data.readFloatLE(i * 4));
    expect(values).toEqual([1, 1, 1, -1, -1, -1]);
  });

  it("argmax postprocess returns an int64 class id", () => {
    const [out] = applyProfile("argmax", HookId.postprocess, [f32([0.1, 0.9, 0.3])], new Map());
    if (out.dtype === ElementType.string) throw new Error("unexpected");
    expect(out.dtype).toBe(ElementType.int64);
    expect(out.shape).toEqual([1]);
    expect(out.data.readBigInt64LE()).toBe(1n);
  });

  it("argmax ignores preprocess", () => {
    const t = f32([5, 1]);
    expect(applyProfile("argmax", HookId.preprocess, [t], new Map())).toEqual([t]);
  });
});

describe("WorkerState", () => {
  it("answers every request with the echoed hook", () => {
    const state = new WorkerState("identity");
    for (const hook of [HookId.beforePreprocess, HookId.preprocess, HookId.afterPreprocess]) {
      const tensors = hook === HookId.preprocess ? [f32([1])] : [];
      const reply = decodeFrame(state.handle(encodeFrame(tensors, new Map(), hook)));
      expect(reply.hook).toBe(hook);
      expect(reply.tensors).toEqual(tensors);
    }
  });

  it("counts hooks and reports them on after_postprocess", () => {
    const state = new WorkerState("identity");
    state.handle(encodeFrame([], new Map(), HookId.beforePreprocess));
    state.handle(encodeFrame([], new Map(), HookId.beforePostprocess));
    for (let i = 0; i < 10; i++) {
      state.handle(encodeFrame([f32([1])], new Map(), HookId.preprocess));
      state.handle(encodeFrame([f32([1])], new Map(), HookId.postprocess));
    }
    state.handle(encodeFrame([], new Map(), HookId.afterPreprocess));
    const final = decodeFrame(state.handle(encodeFrame([], new Map(), HookId.afterPostprocess)));
    expect(final.ctx.get("n_before_preprocess")).toBe("1");
    expect(final.ctx.get("n_preprocess")).toBe("10");
    expect(final.ctx.get("n_postprocess")).toBe("10");
    expect(final.ctx.get("n_after_postprocess")).toBe("1");
  });

  it("answers malformed frames with an in-band error frame and keeps going", () => {
    const state = new WorkerState("identity");
    const bad = Buffer.concat([Buffer.from([10, 0, 0, 0]), Buffer.alloc(10, 0xff)]);
    const errReply = decodeFrame(state.handle(bad));
    expect(errReply.ctx.has("error")).toBe(true);
    expect(errReply.tensors).toEqual([]);
    const ok = decodeFrame(state.handle(encodeFrame([], new Map(), HookId.beforePreprocess)));
    expect(ok.ctx.has("error")).toBe(false);
  });
});

describe("conformance vectors", () => {
  it("reproduces every checked-in response byte for byte", () => {
    const names = readdirSync(CONFORMANCE_DIR)
      .filter((n) => n.endsWith(".req.bin"))
      .sort();
    expect(names.length).toBeGreaterThanOrEqual(10);
    const state = new WorkerState("identity");
    for (const name of names) {
      const request = readFileSync(join(CONFORMANCE_DIR, name));
      const expected = readFileSync(join(CONFORMANCE_DIR, name.replace(".req.", ".resp.")));
      expect(state.handle(request).equals(expected)).toBe(true);
    }
  });
});

describe("worker process end to end", () => {
  it("serves a full session over stdio and exits on stream close", () => {
    const frames = [
      encodeFrame([], new Map([["model_name", "m"]]), HookId.beforePreprocess),
      encodeFrame([], new Map(), HookId.beforePostprocess),
      encodeFrame([f32([4, 5, 6])], new Map(), HookId.preprocess),
      encodeFrame([f32([4, 5, 6])], new Map(), HookId.postprocess),
      encodeFrame([], new Map(), HookId.afterPreprocess),
      encodeFrame([], new Map(), HookId.afterPostprocess),
    ];
    const proc = spawnSync("node", [WORKER_JS, "--profile", "identity"], {
      input: Buffer.concat(frames),
      timeout: 20_000,
    });
    expect(proc.status).toBe(0);
    let pos = 0;
    const replies: Buffer[] = [];
    while (pos < proc.stdout.length) {
      const length = proc.stdout.readUInt32LE(pos);
      replies.push(proc.stdout.subarray(pos, pos + 4 + length));
      pos += 4 + length;
    }
    expect(replies.length).toBe(6);
    const preReply = decodeFrame(replies[2]);
    expect(preReply.tensors).toEqual([f32([4, 5, 6])]);
    const finalReply = decodeFrame(replies[5]);
    expect(finalReply.ctx.get("n_preprocess")).toBe("1");
  });

  it("rejects unknown profiles with exit code 2", () => {
    const proc = spawnSync("node", [WORKER_JS, "--profile", "bogus"], {
      input: Buffer.alloc(0),
      timeout: 20_000,
    });
    expect(proc.status).toBe(2);
  });
});
