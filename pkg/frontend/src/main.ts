import { EditorView } from "./editor.js";
import { UiModel } from "./model.js";

function start() {
  const joinForm = document.getElementById("join") as HTMLFormElement;
  const nameInput = document.getElementById("name") as HTMLInputElement;
  const banner = document.getElementById("banner") as HTMLElement;
  const workspace = document.getElementById("workspace") as HTMLElement;

  joinForm.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const name = nameInput.value.trim();
    if (!name) return;
    const url = `ws://${location.host}/`;
    const socket = new WebSocket(url);
    const model = new UiModel(name, (frame) => socket.send(frame));
    const view = new EditorView(model, workspace);

    socket.addEventListener("open", () => {
      banner.textContent = "";
      joinForm.style.display = "none";
      model.connect();
    });
    socket.addEventListener("message", (ev) => model.onFrame(String(ev.data)));
    socket.addEventListener("close", () => {
      banner.textContent = "connection lost - read-only; reload to retry";
    });
    socket.addEventListener("error", () => {
      banner.textContent = `cannot reach ${url} - is the relay running?`;
      joinForm.style.display = "";
    });
    view.render();
  });
}

start();
