// Scripted browser session against the real Python study service: complete
// 10 items (with a double-click on every vote), then check the server-side
// vote log and that the results view equals the /api/results payload.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { createApi } from "../src/api.js";
import { loadResults, toRows } from "../src/results.js";
import { memoryStorage, StudySession } from "../src/session.js";
import { renderItem, renderResultsTable } from "../src/view.js";

const N_ITEMS = 10;

function studyFixture(): object {
  const items = [];
  for (let i = 0; i < N_ITEMS; i++) {
    const flip = i % 2 === 0;
    items.push({
      item_id: `item-${String(i).padStart(4, "0")}`,
      image_id: `img-${i}`,
      pair: ["m1", "m2"],
      left_method: flip ? "m1" : "m2",
      right_method: flip ? "m2" : "m1",
      left_crop: `/static/${1000 + i}.png`,
      right_crop: `/static/${2000 + i}.png`,
    });
  }
  return { seed: 7, items };
}

async function waitForServer(base: string, attempts = 60): Promise<void> {
  for (let i = 0; i < attempts; i++) {
    try {
      const resp = await fetch(`${base}/api/results`);
      if (resp.status === 200 || resp.status === 403) {
        return;
      }
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`study service did not come up at ${base}`);
}

describe("scripted session against the live study service", () => {
  let proc: ChildProcess;
  let base: string;
  let votesPath: string;

  beforeAll(async () => {
    const dir = mkdtempSync(join(tmpdir(), "study-ui-"));
    const studyPath = join(dir, "study.json");
    votesPath = join(dir, "votes.jsonl");
    writeFileSync(studyPath, JSON.stringify(studyFixture()));
    const port = 18000 + Math.floor(Math.random() * 2000);
    base = `http://127.0.0.1:${port}`;
    proc = spawn(
      "crop",
      ["serve-study", "--study", studyPath, "--votes", votesPath, "--port", String(port), "--operator"],
      { stdio: "ignore" },
    );
    await waitForServer(base);
  }, 30000);

  afterAll(() => {
    proc?.kill();
  });

  it("completes 10 items with exactly 10 server-side votes", async () => {
    const api = createApi(base, fetch);
    const session = new StudySession(api);
    const first = await session.start();
    expect(first.kind).toBe("item");
    expect(session.totalItems).toBe(N_ITEMS);

    let safety = 50;
    while (session.state.kind === "item" && safety-- > 0) {
      const choice = Math.random() < 0.5 ? "left" : "right";
      // Double-click: fire the same choice twice without awaiting in between.
      const both = [session.choose(choice), session.choose(choice)] as const;
      await Promise.all(both);
    }
    expect(session.state.kind).toBe("done");
    if (session.state.kind === "done") {
      expect(session.state.progress).toEqual({ done: N_ITEMS, total: N_ITEMS });
    }
    expect(session.events.length).toBe(N_ITEMS);

    const lines = readFileSync(votesPath, "utf-8").trim().split("\n");
    expect(lines.length).toBe(N_ITEMS);
    const keys = new Set(
      lines.map((l) => {
        const record = JSON.parse(l) as { session: string; item_id: string };
        return `${record.session}:${record.item_id}`;
      }),
    );
    expect(keys.size).toBe(N_ITEMS);
  }, 30000);

  it("never exposes method labels to the client", async () => {
    const api = createApi(base, fetch);
    const session = new StudySession(api, memoryStorage());
    const state = await session.start();
    expect(state.kind).toBe("item");
    if (state.kind === "item") {
      const html = renderItem(state.item, false);
      expect(html).not.toMatch(/m1|m2/);
    }
  });

  it("results view equals the /api/results payload", async () => {
    const api = createApi(base, fetch);
    const { rows, raw } = await loadResults(api);
    const direct = (await (await fetch(`${base}/api/results`)).json()) as typeof raw;
    expect(raw).toEqual(direct);
    expect(rows).toEqual(toRows(direct));
    const html = renderResultsTable(rows, raw.total_votes);
    for (const pair of direct.pairs) {
      expect(html).toContain(pair.rate_a.toFixed(1));
      expect(html).toContain(pair.rate_b.toFixed(1));
    }
    expect(html).toContain(`${direct.total_votes} votes collected`);
  });

  it("a resumed session keeps its server-side progress", async () => {
    const api = createApi(base, fetch);
    const storage = memoryStorage();
    const fresh = new StudySession(api, storage);
    await fresh.start();
    await fresh.choose("left");
    await fresh.choose("right");

    const resumed = new StudySession(api, storage);
    const state = await resumed.start();
    expect(state.kind).toBe("item");
    if (state.kind === "item") {
      expect(state.item.progress.done).toBe(2);
    }
  });
});
