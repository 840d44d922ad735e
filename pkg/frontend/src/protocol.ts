// Wire protocol: one canonical JSON message per WebSocket frame, the same
// schema the TCP line protocol uses.

export interface Message {
  v: number;
  type: string;
  seq: number;
  session: string;
  body: Record<string, unknown>;
}

export interface ElementRow {
  id: number;
  path: string;
  span: [number, number];
}

export interface FileSnapshot {
  file_name: string;
  version: number;
  text: string;
  elements: ElementRow[];
}

export interface Conflict {
  file_name: string;
  element_path: string;
  kind: "both_changed" | "deleted_upstream";
}

export interface Diagnostic {
  start: number;
  end: number;
  code: string;
  message: string;
}

export const MESSAGE_TYPES = new Set([
  "hello", "welcome", "edit_intent", "lock_grant", "lock_deny", "commit",
  "commit_ack", "commit_reject", "propagate", "unlock_notice", "off_record",
  "on_record", "reconcile_report", "error", "bye",
]);

export function encode(msg: Message): string {
  // canonical form: sorted keys, no spaces
  return canonical({
    body: msg.body, seq: msg.seq, session: msg.session, type: msg.type, v: msg.v,
  });
}

function canonical(value: unknown): string {
  if (value === null || typeof value !== "object") return JSON.stringify(value);
  if (Array.isArray(value)) return "[" + value.map(canonical).join(",") + "]";
  const obj = value as Record<string, unknown>;
  const parts = Object.keys(obj).sort().map(
    (k) => JSON.stringify(k) + ":" + canonical(obj[k]));
  return "{" + parts.join(",") + "}";
}

export function decode(frame: string): Message {
  const obj = JSON.parse(frame);
  if (typeof obj !== "object" || obj === null) throw new Error("not an object");
  const { v, type, seq, session, body } = obj;
  if (v !== 1) throw new Error(`unsupported protocol version ${v}`);
  if (typeof type !== "string" || !MESSAGE_TYPES.has(type)) {
    throw new Error(`unknown message type ${type}`);
  }
  if (typeof seq !== "number" || typeof session !== "string"
      || typeof body !== "object" || body === null) {
    throw new Error("malformed envelope");
  }
  return { v, type, seq, session, body };
}
