/**
 * Processing profiles: what the worker does to tensors on the data hooks.
 *
 * identity   echo tensors unchanged
 * normalize  preprocess applies (x - mean) / rescale with constants from ctx
 * argmax     postprocess maps each tensor to an int64 class-id tensor
 */

import {
  Ctx,
  DTYPE_WIDTHS,
  ElementType,
  HookId,
  NumericTensor,
  Tensor,
  elementCount,
  isStringTensor,
} from "./frames.js";

export type ProfileName = "identity" | "normalize" | "argmax";

export const PROFILE_NAMES: ProfileName[] = ["identity", "normalize", "argmax"];

/** Read element i of a numeric tensor as a JS number (int64 loses precision past 2^53). */
function valueAt(t: NumericTensor, i: number): number {
  switch (t.dtype) {
    case ElementType.uint8:
      return t.data.readUInt8(i);
    case ElementType.int8:
      return t.data.readInt8(i);
    case ElementType.int32:
      return t.data.readInt32LE(i * 4);
    case ElementType.int64:
      return Number(t.data.readBigInt64LE(i * 8));
    case ElementType.float32:
      return t.data.readFloatLE(i * 4);
    case ElementType.float64:
      return t.data.readDoubleLE(i * 8);
  }
}

function parseMean(ctx: Ctx): number[] {
  const raw = ctx.get("mean");
  if (!raw) return [0];
  const mean = raw.split(",").map((s) => Number(s.trim()));
  if (mean.some((v) => Number.isNaN(v)) || mean.length === 0) {
    throw new Error(`bad mean in ctx: ${raw}`);
  }
  return mean;
}

function parseRescale(ctx: Ctx): number {
  const raw = ctx.get("rescale");
  if (raw === undefined) return 1;
  const rescale = Number(raw);
  if (Number.isNaN(rescale) || rescale === 0) {
    throw new Error(`bad rescale in ctx: ${raw}`);
  }
  return rescale;
}

function normalizeTensor(t: Tensor, mean: number[], rescale: number): Tensor {
  if (isStringTensor(t)) return t;
  const count = elementCount(t.shape);
  // per-channel along the last axis when it matches the mean length
  const lastDim = t.shape.length ? t.shape[t.shape.length - 1] : 1;
  const channels = lastDim === mean.length ? mean.length : 1;
  const out = Buffer.alloc(count * DTYPE_WIDTHS[ElementType.float32]);
  for (let i = 0; i < count; i++) {
    const m = channels > 1 ? mean[i % channels] : mean[0];
    out.writeFloatLE(Math.fround((valueAt(t, i) - m) / rescale), i * 4);
  }
  return { dtype: ElementType.float32, shape: [...t.shape], data: out };
}

function argmaxTensor(t: Tensor): Tensor {
  if (isStringTensor(t)) {
    throw new Error("argmax of a string tensor");
  }
  const count = elementCount(t.shape);
  if (count === 0) throw new Error("argmax of an empty tensor");
  let best = 0;
  let bestValue = valueAt(t, 0);
  for (let i = 1; i < count; i++) {
    const v = valueAt(t, i);
    if (v > bestValue) {
      best = i;
      bestValue = v;
    }
  }
  const data = Buffer.alloc(8);
  data.writeBigInt64LE(BigInt(best));
  return { dtype: ElementType.int64, shape: [1], data };
}

export function applyProfile(
  profile: ProfileName,
  hook: HookId,
  tensors: Tensor[],
  ctx: Ctx,
): Tensor[] {
  if (profile === "normalize" && hook === HookId.preprocess) {
    const mean = parseMean(ctx);
    const rescale = parseRescale(ctx);
    return tensors.map((t) => normalizeTensor(t, mean, rescale));
  }
  if (profile === "argmax" && hook === HookId.postprocess) {
    return tensors.map(argmaxTensor);
  }
  return tensors;
}
