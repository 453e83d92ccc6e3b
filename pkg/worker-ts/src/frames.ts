/**
 * Frame protocol codec: bit-exact binary framing for tensors + context.
 *
 * Layout (all integers little-endian):
 *   u32 total_payload_length, then the payload:
 *     u8  hook_id (0..5)
 *     u8  tensor_count
 *     u32 ctx_entry_count, per entry: u32 key_len, key, u32 val_len, val
 *     per tensor: u8 dtype_code, u8 rank, rank x u64 dims, then data
 *       numeric dtypes -> raw row-major bytes
 *       string dtype   -> per element: u32 len, bytes
 */

export enum ElementType {
  uint8 = 0,
  int8 = 1,
  int32 = 2,
  int64 = 3,
  float32 = 4,
  float64 = 5,
  string = 6,
}

export const DTYPE_WIDTHS: Record<ElementType, number> = {
  [ElementType.uint8]: 1,
  [ElementType.int8]: 1,
  [ElementType.int32]: 4,
  [ElementType.int64]: 8,
  [ElementType.float32]: 4,
  [ElementType.float64]: 8,
  [ElementType.string]: 0, // variable
};

export enum HookId {
  beforePreprocess = 0,
  preprocess = 1,
  afterPreprocess = 2,
  beforePostprocess = 3,
  postprocess = 4,
  afterPostprocess = 5,
}

export const DATA_HOOKS = new Set([HookId.preprocess, HookId.postprocess]);

export interface NumericTensor {
  dtype: Exclude<ElementType, ElementType.string>;
  shape: number[];
  data: Buffer;
}

export interface StringTensor {
  dtype: ElementType.string;
  shape: number[];
  elements: Buffer[];
}

export type Tensor = NumericTensor | StringTensor;

/** Ordered string-to-string context entries. */
export type Ctx = Map<string, string>;

export class FrameError extends Error {}

export function elementCount(shape: number[]): number {
  return shape.reduce((acc, d) => acc * d, 1);
}

export function isStringTensor(t: Tensor): t is StringTensor {
  return t.dtype === ElementType.string;
}

export function encodeFrame(tensors: Tensor[], ctx: Ctx, hook: HookId): Buffer {
  if (tensors.length > 0xff) {
    throw new FrameError(`at most 255 tensors per frame, got ${tensors.length}`);
  }
  const parts: Buffer[] = [];
  const u8 = (v: number) => {
    const b = Buffer.alloc(1);
    b.writeUInt8(v);
    parts.push(b);
  };
  const u32 = (v: number) => {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v);
    parts.push(b);
  };
  const u64 = (v: number) => {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(BigInt(v));
    parts.push(b);
  };

  u8(hook);
  u8(tensors.length);
  u32(ctx.size);
  for (const [key, value] of ctx) {
    const kb = Buffer.from(key, "utf-8");
    const vb = Buffer.from(value, "utf-8");
    u32(kb.length);
    parts.push(kb);
    u32(vb.length);
    parts.push(vb);
  }
  for (const t of tensors) {
    u8(t.dtype);
    u8(t.shape.length);
    for (const dim of t.shape) u64(dim);
    if (isStringTensor(t)) {
      if (t.elements.length !== elementCount(t.shape)) {
        throw new FrameError("string tensor element count does not match shape");
      }
      for (const elem of t.elements) {
        u32(elem.length);
        parts.push(elem);
      }
    } else {
      const want = elementCount(t.shape) * DTYPE_WIDTHS[t.dtype];
      if (t.data.length !== want) {
        throw new FrameError(`tensor needs ${want} bytes, got ${t.data.length}`);
      }
      parts.push(t.data);
    }
  }
  const payload = Buffer.concat(parts);
  const header = Buffer.alloc(4);
  header.writeUInt32LE(payload.length);
  return Buffer.concat([header, payload]);
}

class Cursor {
  pos = 0;

  constructor(private readonly buf: Buffer) {}

  take(n: number): Buffer {
    if (this.pos + n > this.buf.length) {
      throw new FrameError(
        `frame payload ended at byte ${this.buf.length}, needed ${this.pos + n}`,
      );
    }
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  u8(): number {
    return this.take(1).readUInt8();
  }

  u32(): number {
    return this.take(4).readUInt32LE();
  }

  u64(): number {
    const v = this.take(8).readBigUInt64LE();
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new FrameError(`dimension ${v} too large`);
    }
    return Number(v);
  }

  get exhausted(): boolean {
    return this.pos === this.buf.length;
  }
}

export interface DecodedFrame {
  tensors: Tensor[];
  ctx: Ctx;
  hook: HookId;
}

export function decodeFrame(frame: Buffer): DecodedFrame {
  if (frame.length < 4) {
    throw new FrameError(`frame header needs 4 bytes, got ${frame.length}`);
  }
  const declared = frame.readUInt32LE(0);
  const payload = frame.subarray(4);
  if (payload.length < declared) {
    throw new FrameError(
      `frame declares ${declared} payload bytes, only ${payload.length} present`,
    );
  }
  if (payload.length > declared) {
    throw new FrameError(
      `frame declares ${declared} payload bytes but carries ${payload.length}`,
    );
  }
  const cur = new Cursor(payload);
  const hookRaw = cur.u8();
  if (!(hookRaw in HookId)) throw new FrameError(`hook id ${hookRaw} outside 0..5`);
  const hook = hookRaw as HookId;
  const tensorCount = cur.u8();
  const ctx: Ctx = new Map();
  const ctxCount = cur.u32();
  for (let i = 0; i < ctxCount; i++) {
    const key = cur.take(cur.u32()).toString("utf-8");
    const value = cur.take(cur.u32()).toString("utf-8");
    ctx.set(key, value);
  }
  const tensors: Tensor[] = [];
  for (let i = 0; i < tensorCount; i++) {
    const code = cur.u8();
    if (!(code in ElementType)) throw new FrameError(`dtype code ${code} outside 0..6`);
    const dtype = code as ElementType;
    const rank = cur.u8();
    const shape: number[] = [];
    for (let d = 0; d < rank; d++) shape.push(cur.u64());
    const count = elementCount(shape);
    if (dtype === ElementType.string) {
      const elements: Buffer[] = [];
      for (let e = 0; e < count; e++) elements.push(Buffer.from(cur.take(cur.u32())));
      tensors.push({ dtype, shape, elements });
    } else {
      tensors.push({
        dtype,
        shape,
        data: Buffer.from(cur.take(count * DTYPE_WIDTHS[dtype])),
      });
    }
  }
  if (!cur.exhausted) {
    throw new FrameError("frame has undeclared trailing payload bytes");
  }
  return { tensors, ctx, hook };
}

/**
 * Incremental splitter for a byte stream of frames: feed chunks, pull
 * complete frames (header included) as they become available.
 */
export class FrameScanner {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): Buffer[] {
    this.buffer = this.buffer.length ? Buffer.concat([this.buffer, chunk]) : chunk;
    const frames: Buffer[] = [];
    while (this.buffer.length >= 4) {
      const declared = this.buffer.readUInt32LE(0);
      if (this.buffer.length < 4 + declared) break;
      frames.push(this.buffer.subarray(0, 4 + declared));
      this.buffer = this.buffer.subarray(4 + declared);
    }
    return frames;
  }

  get pendingBytes(): number {
    return this.buffer.length;
  }
}
