// DOM glue: a plain code area per file with a highlight backdrop for lock
// overlays. The view re-renders from the model after every event and
// never holds text state of its own.

import { UiModel } from "./model.js";

const OWN_TINT = "rgba(80, 160, 255, 0.25)";
const FOREIGN_TINT = "rgba(255, 120, 80, 0.35)";

export class EditorView {
  private model: UiModel;
  private root: HTMLElement;
  private fileSelect!: HTMLSelectElement;
  private textarea!: HTMLTextAreaElement;
  private backdrop!: HTMLDivElement;
  private status!: HTMLDivElement;
  private toastBox!: HTMLDivElement;
  private problemBox!: HTMLDivElement;
  private conflictBox!: HTMLDivElement;
  private recordButton!: HTMLButtonElement;
  private current = "";

  constructor(model: UiModel, root: HTMLElement) {
    this.model = model;
    this.root = root;
    this.build();
    model.onChange = () => this.render();
  }

  private build() {
    this.root.innerHTML = `
      <div class="bar">
        <strong id="who"></strong>
        <select id="files"></select>
        <button id="record"></button>
        <span id="status"></span>
      </div>
      <div class="editor">
        <div id="backdrop" class="backdrop"></div>
        <textarea id="code" spellcheck="false"></textarea>
      </div>
      <div id="toasts"></div>
      <div id="problems"></div>
      <div id="conflicts"></div>`;
    this.fileSelect = this.root.querySelector("#files")!;
    this.textarea = this.root.querySelector("#code")!;
    this.backdrop = this.root.querySelector("#backdrop")!;
    this.status = this.root.querySelector("#status")!;
    this.toastBox = this.root.querySelector("#toasts")!;
    this.problemBox = this.root.querySelector("#problems")!;
    this.conflictBox = this.root.querySelector("#conflicts")!;
    this.recordButton = this.root.querySelector("#record")!;
    (this.root.querySelector("#who") as HTMLElement).textContent = this.model.name;

    this.fileSelect.addEventListener("change", () => {
      this.current = this.fileSelect.value;
      this.render();
    });
    this.recordButton.addEventListener("click", () => this.model.toggleRecord());

    this.textarea.addEventListener("beforeinput", (ev) => {
      ev.preventDefault();
      const e = ev as InputEvent;
      const start = this.textarea.selectionStart ?? 0;
      const end = this.textarea.selectionEnd ?? start;
      if (e.inputType === "insertText" || e.inputType === "insertFromPaste") {
        const data = e.data ?? "";
        if (end > start) this.model.keystroke(this.current, start, undefined, end - start);
        if (data) this.model.keystroke(this.current, start, data);
      } else if (e.inputType === "insertLineBreak" || e.inputType === "insertParagraph") {
        this.model.keystroke(this.current, start, "\n");
      } else if (e.inputType === "deleteContentBackward") {
        if (end > start) this.model.keystroke(this.current, start, undefined, end - start);
        else if (start > 0) this.model.keystroke(this.current, start - 1, undefined, 1);
      } else if (e.inputType === "deleteContentForward") {
        if (end > start) this.model.keystroke(this.current, start, undefined, end - start);
        else this.model.keystroke(this.current, start, undefined, 1);
      }
    });
    this.textarea.addEventListener("scroll", () => {
      this.backdrop.scrollTop = this.textarea.scrollTop;
      this.backdrop.scrollLeft = this.textarea.scrollLeft;
    });
  }

  render() {
    const names = [...this.model.docs.keys()].sort();
    if (!this.current && names.length > 0) this.current = names[0];
    if (this.fileSelect.length !== names.length) {
      this.fileSelect.innerHTML = names
        .map((n) => `<option value="${n}">${n}</option>`).join("");
      this.fileSelect.value = this.current;
    }
    const doc = this.model.docs.get(this.current);
    if (doc) {
      const caret = this.textarea.selectionStart;
      if (this.textarea.value !== doc.text) {
        this.textarea.value = doc.text;
        this.textarea.selectionStart = this.textarea.selectionEnd =
          Math.min(caret ?? doc.text.length, doc.text.length);
      }
      this.backdrop.innerHTML = this.highlighted(doc.text);
      this.status.textContent =
        `v${doc.version}` +
        (this.model.mode === "off" ? " - OFF THE RECORD" : "") +
        (doc.unacked.length > 0 ? " - pending" : "");
    }
    this.recordButton.textContent =
      this.model.mode === "off" ? "go on the record" : "go off the record";
    this.toastBox.innerHTML = this.model.toasts
      .slice(-3)
      .map((t) => `<div class="toast">${escapeHtml(t.text)}</div>`)
      .join("");
    const problems = this.model.problems.get(this.current) ?? [];
    this.problemBox.innerHTML = problems
      .map((d) => `<div class="problem">[${d.code}] ${escapeHtml(d.message)}</div>`)
      .join("");
    if (this.model.conflicts !== null && this.model.conflicts.length > 0) {
      this.conflictBox.innerHTML =
        "<h4>conflicts while off the record</h4>" +
        this.model.conflicts
          .map((c) => `<div class="conflict">${c.file_name} ${c.element_path}: ${c.kind}</div>`)
          .join("") +
        `<details><summary>your local text (copy out)</summary><pre>${
          escapeHtml([...this.model.preserved.entries()]
            .map(([n, t]) => `--- ${n}\n${t}`).join("\n"))
        }</pre></details>`;
    } else {
      this.conflictBox.innerHTML = "";
    }
  }

  private highlighted(text: string): string {
    const overlays = this.model.overlays(this.current)
      .sort((a, b) => a.span[0] - b.span[0]);
    let out = "";
    let pos = 0;
    for (const ov of overlays) {
      const [s, e] = ov.span;
      if (s < pos) continue;
      out += escapeHtml(text.slice(pos, s));
      const tint = ov.own ? OWN_TINT : FOREIGN_TINT;
      const title = ov.own ? `locked by you (${ov.kind})` : `locked by ${ov.holder}`;
      out += `<mark style="background:${tint}" title="${title}">` +
        escapeHtml(text.slice(s, e)) + "</mark>";
      pos = e;
    }
    out += escapeHtml(text.slice(pos));
    return out + "\n";
  }
}

function escapeHtml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}
