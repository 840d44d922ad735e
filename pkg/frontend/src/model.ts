// The editor's session model. Every piece of state here derives from the
// message stream plus the user's keystrokes; the view layer renders it
// and never mutates text on its own. Lock and buildability decisions stay
// on the server: this model only computes which element a keystroke
// touches (span arithmetic over server-provided element tables) and asks.

import {
  Conflict,
  Diagnostic,
  ElementRow,
  FileSnapshot,
  Message,
  encode,
} from "./protocol.js";

export type SendFrame = (frame: string) => void;

export interface Overlay {
  path: string;
  span: [number, number];
  holder: string;
  own: boolean;
  kind: string;
}

export interface Toast {
  text: string;
  at: number;
}

interface PendingOp {
  offset: number;
  insert?: string;
  delLen?: number;
}

interface InFlightCommit {
  text: string;
  ops: PendingOp[]; // unacked ops included in this commit
}

export class DocState {
  version: number;
  text: string;
  ackedText: string;
  elements: ElementRow[];
  unacked: PendingOp[] = [];
  commits: InFlightCommit[] = [];

  constructor(snap: FileSnapshot) {
    this.version = snap.version;
    this.text = snap.text;
    this.ackedText = snap.text;
    this.elements = snap.elements;
  }
}

interface HeldLock {
  lockId: number;
  elements: string[];
  kind: string;
}

interface QueuedEdit {
  file: string;
  op: PendingOp;
  needs: { editClass: string; target: string } | null;
}

const TOAST_KEEP = 6;

/** Shift element spans through a sequence of local edits. */
export function shiftElements(elements: ElementRow[], ops: PendingOp[]): ElementRow[] {
  let rows = elements.map((e) => ({ ...e, span: [...e.span] as [number, number] }));
  for (const op of ops) {
    const p = op.offset;
    if (op.insert !== undefined) {
      const len = op.insert.length;
      for (const r of rows) {
        if (p <= r.span[0]) {
          r.span[0] += len;
          r.span[1] += len;
        } else if (p < r.span[1]) {
          r.span[1] += len;
        }
      }
    } else {
      const k = op.delLen ?? 0;
      const clamp = (x: number) => (x >= p + k ? x - k : x > p ? p : x);
      for (const r of rows) {
        r.span = [clamp(r.span[0]), clamp(r.span[1])];
      }
    }
  }
  return rows;
}

export class UiModel {
  name: string;
  session = "";
  seq = 0;
  mode: "on" | "off" | "reconciling" = "on";
  docs = new Map<string, DocState>();
  held = new Map<number, HeldLock>();
  foreign = new Map<string, { holder: string; kind: string }>(); // path -> lock info learned from denials
  toasts: Toast[] = [];
  problems = new Map<string, Diagnostic[]>();
  conflicts: Conflict[] | null = null;
  preserved = new Map<string, string>();
  lastError = "";
  private send: SendFrame;
  private queue: QueuedEdit[] = [];
  private awaitingIntent: QueuedEdit | null = null;
  onChange: () => void = () => undefined;

  constructor(name: string, send: SendFrame) {
    this.name = name;
    this.send = send;
  }

  private post(type: string, body: Record<string, unknown>) {
    this.seq += 1;
    const msg: Message = { v: 1, type, seq: this.seq, session: this.session, body };
    this.send(encode(msg));
  }

  connect() {
    this.post("hello", { name: this.name });
  }

  private toast(text: string) {
    this.toasts.push({ text, at: Date.now() });
    if (this.toasts.length > TOAST_KEEP) this.toasts.shift();
  }

  // ------------------------------------------------------- classification

  /** Innermost element whose span strictly contains the offset. */
  elementAt(doc: DocState, offset: number): ElementRow | null {
    let best: ElementRow | null = null;
    for (const el of doc.elements) {
      if (el.span[0] < offset && offset < el.span[1]) {
        if (best === null || el.span[1] - el.span[0] < best.span[1] - best.span[0]) {
          best = el;
        }
      }
    }
    return best;
  }

  /** What lock an insertion at this offset needs. */
  classify(doc: DocState, offset: number): { editClass: string; target: string } {
    const el = this.elementAt(doc, offset);
    if (el === null) {
      return { editClass: "new_member", target: "" }; // top-level gap
    }
    const slice = doc.ackedText.slice(el.span[0], el.span[1]);
    const rel = offset - el.span[0];
    if (!el.path.includes("/")) {
      // a class: before its "{" is the header, inside the braces but
      // outside every member is room for a new member
      const brace = slice.indexOf("{");
      const inner = this.innerMemberAt(doc, el, offset);
      if (inner !== null) return this.classifyMember(doc, inner, offset);
      if (brace >= 0 && rel < brace) return { editClass: "header", target: el.path };
      return { editClass: "new_member", target: el.path };
    }
    return this.classifyMember(doc, el, offset);
  }

  private innerMemberAt(doc: DocState, cls: ElementRow, offset: number): ElementRow | null {
    for (const el of doc.elements) {
      if (el.path.startsWith(cls.path + "/")
          && el.span[0] < offset && offset < el.span[1]) {
        return el;
      }
    }
    return null;
  }

  private classifyMember(doc: DocState, el: ElementRow, offset: number) {
    const slice = doc.ackedText.slice(el.span[0], el.span[1]);
    const paren = slice.indexOf("(");
    if (paren < 0) return { editClass: "header", target: el.path }; // a field
    const brace = slice.indexOf("{", paren);
    const rel = offset - el.span[0];
    if (brace >= 0 && rel > brace) return { editClass: "body", target: el.path };
    return { editClass: "header", target: el.path };
  }

  private covered(editClass: string, target: string): boolean {
    for (const lock of this.held.values()) {
      if (editClass === "new_member") {
        // a provisional grant lists a "~id" token; reuse any we hold
        if (lock.elements.some((p) => p.startsWith("~"))) return true;
        continue;
      }
      if (!lock.elements.includes(target)) continue;
      if (editClass === "header" && lock.kind !== "defining") continue;
      return true;
    }
    return false;
  }

  // -------------------------------------------------------------- editing

  keystroke(file: string, offset: number, insert?: string, delLen?: number) {
    const doc = this.docs.get(file);
    if (!doc || this.mode === "reconciling") return;
    const op: PendingOp = { offset, insert, delLen };
    if (this.mode === "off") {
      this.apply(file, op); // isolated: no locks, no commits
      this.onChange();
      return;
    }
    // base coordinates: offsets in unacked text map 1:1 onto acked text
    // only when nothing is pending before them; for lock purposes the
    // nearest classification is fine - the server re-verifies at commit
    const needs = this.classify(doc, this.baseOffset(doc, offset));
    const queued: QueuedEdit = {
      file, op,
      needs: this.covered(needs.editClass, needs.target) ? null : needs,
    };
    this.queue.push(queued);
    this.pumpQueue();
  }

  private baseOffset(doc: DocState, offset: number): number {
    let shift = 0;
    for (const op of doc.unacked) {
      if (op.offset < offset) {
        shift += op.insert !== undefined ? -op.insert.length : (op.delLen ?? 0);
      }
    }
    const base = offset + shift;
    return Math.max(0, Math.min(base, doc.ackedText.length));
  }

  private pumpQueue() {
    if (this.awaitingIntent !== null) return;
    while (this.queue.length > 0) {
      const next = this.queue[0];
      if (next.needs === null) {
        this.queue.shift();
        this.apply(next.file, next.op);
        this.commit(next.file);
        continue;
      }
      this.awaitingIntent = next;
      const doc = this.docs.get(next.file)!;
      this.post("edit_intent", {
        file_name: next.file,
        base_version: doc.version,
        target_path: next.needs.target,
        edit_class: next.needs.editClass,
      });
      return;
    }
    this.onChange();
  }

  private apply(file: string, op: PendingOp) {
    const doc = this.docs.get(file)!;
    if (op.insert !== undefined) {
      doc.text = doc.text.slice(0, op.offset) + op.insert + doc.text.slice(op.offset);
    } else {
      doc.text = doc.text.slice(0, op.offset) + doc.text.slice(op.offset + (op.delLen ?? 0));
    }
    if (this.mode !== "off") doc.unacked.push(op);
  }

  private commit(file: string) {
    const doc = this.docs.get(file)!;
    doc.commits.push({ text: doc.text, ops: [...doc.unacked] });
    this.post("commit", {
      file_name: file,
      base_version: doc.version,
      text: doc.text,
    });
  }

  toggleRecord() {
    if (this.mode === "on") {
      this.mode = "off";
      this.held.clear();
      this.post("off_record", {});
    } else if (this.mode === "off") {
      this.mode = "reconciling";
      this.preserved = new Map(
        [...this.docs.entries()].map(([n, d]) => [n, d.text]));
      this.post("on_record", {
        files: [...this.docs.entries()]
          .sort(([a], [b]) => (a < b ? -1 : 1))
          .map(([n, d]) => ({ file_name: n, text: d.text })),
      });
    }
    this.onChange();
  }

  // ------------------------------------------------------------- inbound

  onFrame(frame: string) {
    let msg: Message;
    try {
      msg = JSON.parse(frame);
    } catch {
      this.lastError = "bad frame from server";
      return;
    }
    this.onMessage(msg);
  }

  onMessage(msg: Message) {
    switch (msg.type) {
      case "welcome": {
        this.session = (msg.body.session as string) ?? this.session;
        this.docs = new Map();
        for (const snap of msg.body.files as FileSnapshot[]) {
          this.docs.set(snap.file_name, new DocState(snap));
        }
        if (this.mode === "reconciling") this.mode = "on";
        this.held.clear();
        break;
      }
      case "lock_grant": {
        const lockId = msg.body.lock_id as number;
        const elements = msg.body.elements as string[];
        const kind = msg.body.kind as string;
        this.held.set(lockId, { lockId, elements, kind });
        for (const path of elements) this.foreign.delete(path);
        const pending = this.awaitingIntent;
        if (pending !== null) {
          this.awaitingIntent = null;
          this.queue.shift();
          this.apply(pending.file, pending.op);
          this.commit(pending.file);
          this.pumpQueue();
        }
        break;
      }
      case "lock_deny": {
        const holder = msg.body.holder_name as string;
        const elements = msg.body.elements as string[];
        for (const path of elements) {
          if (!path.startsWith("~")) {
            this.foreign.set(path, { holder, kind: "defining" });
          }
        }
        const pending = this.awaitingIntent;
        if (pending !== null) {
          this.awaitingIntent = null;
          this.queue.shift();
          this.pumpQueue();
        }
        this.toast(holder
          ? `locked by ${holder}: ${elements.join(", ")}`
          : `cannot edit ${elements.join(", ")} (${msg.body.reason})`);
        break;
      }
      case "commit_ack": {
        const doc = this.docs.get(msg.body.file_name as string);
        if (!doc) break;
        doc.version = msg.body.version as number;
        const flight = doc.commits.shift();
        if (flight) {
          doc.ackedText = flight.text;
          doc.unacked.splice(0, flight.ops.length);
          // the ack carries no element table: shift the known spans
          // through the ops we just committed so overlays stay aligned
          doc.elements = shiftElements(doc.elements, flight.ops);
        }
        this.problems.delete(msg.body.file_name as string);
        if (doc.commits.length === 0) {
          // everything landed; our locks were already dropped server-side
          this.held.clear();
        }
        break;
      }
      case "commit_reject": {
        const file = msg.body.file_name as string;
        const doc = this.docs.get(file);
        if (doc) doc.commits.shift();
        const reason = msg.body.reason as string;
        if (reason === "unbuildable") {
          this.problems.set(file, (msg.body.diagnostics as Diagnostic[]) ?? []);
        } else if (reason === "stale") {
          // the propagate that outdated us rebases and recommits
        } else {
          this.toast(`commit rejected: ${reason}`);
        }
        break;
      }
      case "propagate": {
        const file = msg.body.file_name as string;
        const doc = this.docs.get(file);
        if (!doc || this.mode === "off") break;
        const newRows = msg.body.elements as ElementRow[];
        const newBase = msg.body.text as string;
        this.rebase(doc, newBase, newRows);
        doc.version = msg.body.version as number;
        this.clearForeignOverlapping(newRows);
        if (doc.unacked.length > 0 && doc.commits.length === 0) {
          this.commit(file); // retry pending work against the fresh base
        }
        break;
      }
      case "unlock_notice": {
        for (const path of msg.body.elements as string[]) {
          this.foreign.delete(path);
        }
        break;
      }
      case "reconcile_report": {
        this.conflicts = msg.body.conflicts as Conflict[];
        break;
      }
      case "error": {
        this.lastError = `${msg.body.code}: ${msg.body.message}`;
        this.toast(this.lastError);
        break;
      }
      default:
        break;
    }
    this.onChange();
  }

  /** Re-anchor unacked ops onto a propagated base (matched element
   * boundaries shift each op by the nearest following anchor's delta). */
  private rebase(doc: DocState, newBase: string, newRows: ElementRow[]) {
    const byId = new Map(newRows.map((r) => [r.id, r]));
    const anchors: Array<[number, number]> = [[0, 0],
      [doc.ackedText.length, newBase.length]];
    for (const old of doc.elements) {
      const now = byId.get(old.id);
      if (!now) continue;
      anchors.push([old.span[0], now.span[0]]);
      anchors.push([old.span[1], now.span[1]]);
    }
    anchors.sort((a, b) => a[0] - b[0]);
    const shift = (pos: number): number => {
      for (const [o, n] of anchors) {
        if (o >= pos) return n - o;
      }
      const last = anchors[anchors.length - 1];
      return last[1] - last[0];
    };
    // ops were recorded against the evolving text; approximate by their
    // base projection, which locking keeps disjoint from upstream changes
    const file = this.fileOf(doc);
    const reanchored: PendingOp[] = doc.unacked.map((op) => ({
      ...op, offset: op.offset + shift(op.offset),
    }));
    doc.ackedText = newBase;
    doc.elements = newRows;
    doc.unacked = [];
    doc.text = newBase;
    for (const op of reanchored) {
      const offset = Math.max(0, Math.min(op.offset, doc.text.length));
      this.apply(file, { ...op, offset });
    }
  }

  private fileOf(doc: DocState): string {
    for (const [name, d] of this.docs) if (d === doc) return name;
    throw new Error("unknown doc");
  }

  private clearForeignOverlapping(rows: ElementRow[]) {
    const live = new Set(rows.map((r) => r.path));
    for (const path of [...this.foreign.keys()]) {
      if (!live.has(path)) this.foreign.delete(path);
    }
  }

  // ------------------------------------------------------------ overlays

  overlays(file: string): Overlay[] {
    const doc = this.docs.get(file);
    if (!doc) return [];
    const out: Overlay[] = [];
    for (const el of doc.elements) {
      const foreign = this.foreign.get(el.path);
      if (foreign) {
        out.push({ path: el.path, span: el.span, holder: foreign.holder,
                   own: false, kind: foreign.kind });
        continue;
      }
      for (const lock of this.held.values()) {
        if (lock.elements.includes(el.path)) {
          out.push({ path: el.path, span: el.span, holder: this.name,
                     own: true, kind: lock.kind });
          break;
        }
      }
    }
    return out;
  }
}
