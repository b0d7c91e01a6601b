import { ApiClient } from "./api.js";
import { App, AppElements } from "./app.js";

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const ui: AppElements = {
  imageInput: byId<HTMLInputElement>("image-input"),
  transcribeStatus: byId<HTMLElement>("transcribe-status"),
  solutionBox: byId<HTMLTextAreaElement>("solution-box"),
  submitButton: byId<HTMLButtonElement>("submit-button"),
  feedbackPanel: byId<HTMLElement>("feedback-panel"),
  chatInput: byId<HTMLInputElement>("chat-input"),
  sendButton: byId<HTMLButtonElement>("send-button"),
  chatLog: byId<HTMLElement>("chat-log"),
  studyBadge: byId<HTMLElement>("study-badge"),
};

const params = new URLSearchParams(window.location.search);
const app = new App(new ApiClient(""), ui);
app.start(params.get("course") ?? "dm101", params.get("question") ?? "q1")
  .catch((error) => {
    ui.transcribeStatus.textContent = `Could not start a session: ${String(error)}`;
  });
