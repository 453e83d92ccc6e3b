/**
 * Reference external processing worker.
 *
 * Launched as `node worker.js --profile {identity|normalize|argmax}`; reads
 * frames from stdin, answers every request with exactly one response frame
 * echoing the hook id, and exits cleanly when its input stream closes.
 * Responses to after_postprocess carry the hook counters in their ctx
 * (keys n_<hook_name>), so a host can audit the lifecycle after a run.
 * Malformed frames are answered with an in-band error frame (ctx key
 * "error") and processing continues; one bad request never kills a run.
 */

import { pathToFileURL } from "node:url";

import {
  Ctx,
  DATA_HOOKS,
  DecodedFrame,
  FrameScanner,
  HookId,
  Tensor,
  decodeFrame,
  encodeFrame,
} from "./frames.js";
import { PROFILE_NAMES, ProfileName, applyProfile } from "./profiles.js";

const HOOK_NAMES: Record<HookId, string> = {
  [HookId.beforePreprocess]: "before_preprocess",
  [HookId.preprocess]: "preprocess",
  [HookId.afterPreprocess]: "after_preprocess",
  [HookId.beforePostprocess]: "before_postprocess",
  [HookId.postprocess]: "postprocess",
  [HookId.afterPostprocess]: "after_postprocess",
};

export class WorkerState {
  readonly counts = new Map<HookId, number>(
    Object.values(HookId)
      .filter((v): v is HookId => typeof v === "number")
      .map((h) => [h, 0]),
  );
  startupCtx: Ctx | null = null;

  constructor(readonly profile: ProfileName) {}

  counterCtx(): Ctx {
    const ctx: Ctx = new Map();
    for (const [hook, n] of this.counts) {
      ctx.set(`n_${HOOK_NAMES[hook]}`, String(n));
    }
    return ctx;
  }

  /** One request frame in, one response frame out. */
  handle(frame: Buffer): Buffer {
    let decoded: DecodedFrame;
    try {
      decoded = decodeFrame(frame);
    } catch (err) {
      // Echo the hook byte when it survived; fall back to hook 0.
      const rawHook = frame.length >= 5 ? frame.readUInt8(4) : 0;
      const hook = rawHook in HookId ? (rawHook as HookId) : HookId.beforePreprocess;
      const ctx: Ctx = new Map([["error", String((err as Error).message)]]);
      return encodeFrame([], ctx, hook);
    }
    const { tensors, ctx, hook } = decoded;
    this.counts.set(hook, (this.counts.get(hook) ?? 0) + 1);
    if (hook === HookId.beforePreprocess && this.startupCtx === null) {
      this.startupCtx = ctx;
    }
    let replyTensors: Tensor[] = [];
    let replyCtx: Ctx = new Map();
    try {
      if (DATA_HOOKS.has(hook)) {
        replyTensors = applyProfile(this.profile, hook, tensors, ctx);
      } else if (hook === HookId.afterPostprocess) {
        replyCtx = this.counterCtx();
      }
    } catch (err) {
      replyCtx = new Map([["error", String((err as Error).message)]]);
      replyTensors = [];
    }
    return encodeFrame(replyTensors, replyCtx, hook);
  }
}

function parseProfile(argv: string[]): ProfileName {
  const flag = argv.indexOf("--profile");
  const name = flag >= 0 ? argv[flag + 1] : "identity";
  if (!PROFILE_NAMES.includes(name as ProfileName)) {
    process.stderr.write(`unknown profile ${name}\n`);
    process.exit(2);
  }
  return name as ProfileName;
}

export function main(): void {
  const state = new WorkerState(parseProfile(process.argv.slice(2)));
  const scanner = new FrameScanner();
  process.stdin.on("data", (chunk: Buffer) => {
    for (const frame of scanner.push(chunk)) {
      process.stdout.write(state.handle(frame));
    }
  });
  process.stdin.on("end", () => {
    process.exit(scanner.pendingBytes === 0 ? 0 : 1);
  });
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;

if (invokedDirectly) {
  main();
}
