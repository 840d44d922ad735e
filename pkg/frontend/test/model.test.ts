// Headless checks: the session model reconstructs its entire state from
// the recorded message stream of the golden two-developer run, and the
// keystroke loop applies text only after a grant.

import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { decode } from "../src/protocol.js";
import { UiModel, shiftElements } from "../src/model.js";

const here = dirname(fileURLToPath(import.meta.url));
const trace: Array<{ tick: number; to: string; frame: string }> = JSON.parse(
  readFileSync(join(here, "golden_trace.json"), "utf-8"));

const V0 = "class Calc { int Foo(int x) { return x; } int Bar(int y) { return y; } }";
const V2 = "class Calc { int Foo1(int newParam, int x) { return x; } int Bar(int y) { return y + 1; } }";

function replay(name: string, upToTick = Infinity): UiModel {
  const model = new UiModel(name, () => undefined);
  for (const rec of trace) {
    if (rec.to !== name || rec.tick > upToTick) continue;
    model.onMessage(decode(rec.frame));
  }
  return model;
}

describe("golden trace replay (john's session)", () => {
  it("receives the corpus on welcome", () => {
    const model = replay("john", 0);
    expect(model.session).toBe("s2");
    expect(model.docs.get("main.toy")?.text).toBe(V0);
    expect(model.docs.get("main.toy")?.version).toBe(0);
  });

  it("shows a denial toast naming the holder", () => {
    const model = replay("john", 4);
    const toast = model.toasts.at(-1);
    expect(toast?.text).toContain("locked by bob");
    expect(toast?.text).toContain("Calc/Foo");
  });

  it("tints the denied element as foreign until it unlocks", () => {
    const model = replay("john", 4);
    const overlays = model.overlays("main.toy");
    expect(overlays.some((o) => o.path === "Calc/Foo" && !o.own
      && o.holder === "bob")).toBe(true);
  });

  it("applies the buildable snapshot after the fix", () => {
    const model = replay("john", 6);
    const doc = model.docs.get("main.toy")!;
    expect(doc.text).toBe(V2);
    expect(doc.version).toBe(2);
    // the rename reached us with its element table: the overlay map
    // follows the new paths and the stale foreign tint is gone
    expect(doc.elements.some((e) => e.path === "Calc/Foo1")).toBe(true);
    expect(model.overlays("main.toy").every((o) => o.path !== "Calc/Foo")).toBe(true);
  });

  it("ends converged with the whole trace (bob's inbound view)", () => {
    // john authored the final rename, so its snapshots went to bob
    const model = replay("bob");
    expect(model.docs.get("main.toy")?.text).toContain("Foo2(int newParam, int x)");
  });
});

describe("keystroke loop", () => {
  function freshModel(sent: string[]): UiModel {
    const model = new UiModel("ann", (frame) => sent.push(frame));
    model.onMessage({
      v: 1, type: "welcome", seq: 1, session: "s9",
      body: {
        session: "s9",
        files: [{
          file_name: "main.toy", version: 0, text: V0,
          elements: [
            { id: 1, path: "Calc", span: [0, V0.length] },
            { id: 2, path: "Calc/Foo", span: [13, 41] },
            { id: 3, path: "Calc/Bar", span: [42, 70] },
          ],
        }],
      },
    });
    return model;
  }

  it("sends an intent and applies only after the grant", () => {
    const sent: string[] = [];
    const model = freshModel(sent);
    model.keystroke("main.toy", 20, "1");   // inside Foo's name
    const intent = decode(sent.at(-1)!);
    expect(intent.type).toBe("edit_intent");
    expect(intent.body.edit_class).toBe("header");
    expect(intent.body.target_path).toBe("Calc/Foo");
    expect(model.docs.get("main.toy")?.text).toBe(V0); // untouched so far

    model.onMessage({
      v: 1, type: "lock_grant", seq: 2, session: "s9",
      body: { lock_id: 7, elements: ["Calc/Foo"], kind: "defining" },
    });
    expect(model.docs.get("main.toy")?.text).toContain("Foo1(int x)");
    const commit = decode(sent.at(-1)!);
    expect(commit.type).toBe("commit");
    expect(commit.body.base_version).toBe(0);
  });

  it("keeps the view untouched on a denial", () => {
    const sent: string[] = [];
    const model = freshModel(sent);
    model.keystroke("main.toy", 20, "1");
    model.onMessage({
      v: 1, type: "lock_deny", seq: 2, session: "s9",
      body: { holder_name: "bob", elements: ["Calc/Foo"], reason: "locked" },
    });
    expect(model.docs.get("main.toy")?.text).toBe(V0);
    expect(model.toasts.at(-1)?.text).toContain("bob");
    expect(sent.filter((f) => decode(f).type === "commit")).toHaveLength(0);
  });

  it("classifies class-gap keystrokes as new members", () => {
    const sent: string[] = [];
    const model = freshModel(sent);
    model.keystroke("main.toy", V0.length - 1, "int z;");
    const intent = decode(sent.at(-1)!);
    expect(intent.body.edit_class).toBe("new_member");
    expect(intent.body.target_path).toBe("Calc");
  });

  it("body keystrokes take a body lock", () => {
    const sent: string[] = [];
    const model = freshModel(sent);
    model.keystroke("main.toy", 38, " + 1");  // inside Foo's return
    const intent = decode(sent.at(-1)!);
    expect(intent.body.edit_class).toBe("body");
    expect(intent.body.target_path).toBe("Calc/Foo");
  });

  it("off the record applies immediately without intents", () => {
    const sent: string[] = [];
    const model = freshModel(sent);
    model.toggleRecord();
    const before = sent.length;
    model.keystroke("main.toy", 38, " + 1");
    expect(sent.length).toBe(before);
    expect(model.docs.get("main.toy")?.text).toContain("return x + 1");
  });

  it("reconcile report and preserved text surface after returning", () => {
    const sent: string[] = [];
    const model = freshModel(sent);
    model.toggleRecord();
    model.keystroke("main.toy", 38, " + 1");
    model.toggleRecord();  // -> reconciling
    expect(model.mode).toBe("reconciling");
    model.onMessage({
      v: 1, type: "reconcile_report", seq: 2, session: "s9",
      body: {
        conflicts: [{ file_name: "main.toy", element_path: "Calc/Foo",
                      kind: "both_changed" }],
        base_version_map: { "main.toy": 3 },
      },
    });
    model.onMessage({
      v: 1, type: "welcome", seq: 3, session: "s9",
      body: { session: "s9", files: [{ file_name: "main.toy", version: 3,
        text: V2, elements: [] }] },
    });
    expect(model.mode).toBe("on");
    expect(model.conflicts).toHaveLength(1);
    expect(model.preserved.get("main.toy")).toContain("return x + 1");
    expect(model.docs.get("main.toy")?.text).toBe(V2);
  });
});

describe("span shifting", () => {
  const rows = [
    { id: 1, path: "A", span: [0, 40] as [number, number] },
    { id: 2, path: "A/m", span: [10, 30] as [number, number] },
  ];

  it("inserts inside an element grow it and push followers", () => {
    const out = shiftElements(rows, [{ offset: 15, insert: "xx" }]);
    expect(out[0].span).toEqual([0, 42]);
    expect(out[1].span).toEqual([10, 32]);
  });

  it("deletes shrink overlapped spans", () => {
    const out = shiftElements(rows, [{ offset: 12, delLen: 5 }]);
    expect(out[1].span).toEqual([10, 25]);
  });
});
