/**
 * Full round trip against a live service: a fixture stroke drawn
 * programmatically, submitted over HTTP, masks validated, conflict surfaced
 * without losing the drawn strokes. Spawns the Python service on a random
 * port and tears it down afterwards.
 */
import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ConflictError } from "../src/api.js";
import { scribblesToJson } from "../src/serialize.js";
import { AnnotationStore } from "../src/state.js";
import type { CanvasStroke } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixtures = JSON.parse(readFileSync(
  join(here, "fixtures", "stroke_roundtrip.json"), "utf-8"));

const PORT = 8750 + Math.floor(Math.random() * 200);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | null = null;
let workdir: string;

function python(code: string): string {
  return execFileSync("python3", ["-c", code], { encoding: "utf-8" });
}

async function waitForServer(api: ApiClient, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      await api.listSessions();
      return;
    } catch {
      if (Date.now() > deadline) throw new Error("service never came up");
      await new Promise((resolve) => setTimeout(resolve, 200));
    }
  }
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "ivos-ui-e2e-"));
  python(`
from ivos.evaluation import generate_synthetic_video
from ivos.core import save_frames
video = generate_synthetic_video(4, 10, 64, 64, 2)
save_frames(video.frames, ${JSON.stringify(workdir)} + "/frames")
`);
  server = spawn("python3", ["-c", `
from ivos.service import serve
serve(${JSON.stringify(workdir)} + "/root", port=${PORT})
`], { stdio: "ignore" });
  await waitForServer(new ApiClient(BASE));
}, 60_000);

afterAll(() => {
  server?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe("live service round trip", () => {
  it("runs a round from a drawn fixture stroke and validates the masks", async () => {
    const api = new ApiClient(BASE);
    const sessionId = await api.createSessionFromPath(
      `${workdir}/frames`, 3, { decision: "distance" });
    await api.waitForState(sessionId, ["ready"]);

    const store = new AnnotationStore(api, sessionId);
    const handle = await store.refresh();
    expect(handle.frames).toBe(10);

    // the drawn stroke is a shared fixture; its serialization must equal the
    // server-side fixture bytes before anything goes over the wire
    const fixtureCase = fixtures.cases[0];
    const strokes: CanvasStroke[] = fixtureCase.strokes;
    store.view.frame = fixtureCase.frame;
    for (const s of strokes) store.addStroke(s);
    expect(scribblesToJson(store.view.frame, store.strokes)).toBe(fixtureCase.json);

    const round = await store.submitRound();
    expect(round).toBe(1);
    await store.waitRoundComplete(round!);
    expect(store.progress.running).toBe(false);
    expect(store.timeline.map((t) => t.round)).toEqual([1]);

    const manifest = await api.masksManifest(sessionId, 1);
    expect(manifest.files).toHaveLength(10);
    expect(manifest.provenance.annotated_frame).toBe(fixtureCase.frame);

    // every mask file must decode to a valid label mask for this session
    const maskDir = `${workdir}/root/${sessionId}/rounds/1/masks`;
    const verdict = python(`
from pathlib import Path
from ivos.core import load_mask_png
paths = sorted(Path(${JSON.stringify(maskDir)}).glob("*.png"))
assert len(paths) == 10
for p in paths:
    mask = load_mask_png(p)
    assert mask.grid.shape == (64, 64)
    assert 0 <= mask.grid.min() and mask.grid.max() < 3
print("valid")
`);
    expect(verdict.trim()).toBe("valid");

    // served bytes are identical to the on-disk artifact
    const bytes = new Uint8Array(await api.maskBytes(sessionId, 1, 0));
    const onDisk = readFileSync(join(maskDir, "00000.png"));
    expect(Buffer.from(bytes).equals(onDisk)).toBe(true);

    const metrics = await api.metrics(sessionId);
    expect(metrics.encoder_invocations).toBe(10);
  }, 120_000);

  it("surfaces a conflict without losing the drawn strokes", async () => {
    const api = new ApiClient(BASE);
    const sessionId = await api.createSessionFromPath(
      `${workdir}/frames`, 3, { decision: "distance" });
    await api.waitForState(sessionId, ["ready"]);
    const store = new AnnotationStore(api, sessionId);
    await store.refresh();

    store.addStroke({ object: 1, polarity: "pos", radius: 1, points: [[10, 10], [30, 30]] });
    const first = await store.submitRound();
    expect(first).toBe(1);

    // the round is propagating; a second submission must be rejected and the
    // client-side strokes must survive
    store.addStroke({ object: 2, polarity: "pos", radius: 0, points: [[40, 40], [50, 44]] });
    const strokesBefore = store.strokes.length;
    const second = await store.submitRound(); // store maps ConflictError to null
    expect(second).toBeNull();
    expect(store.strokes.length).toBe(strokesBefore);
    expect(store.notice).toContain("strokes kept");
    await expect(api.submitScribbles(sessionId, scribblesToJson(0, store.strokes)))
      .rejects.toBeInstanceOf(ConflictError);
    await api.waitForState(sessionId, ["ready"]);
  }, 120_000);
});
