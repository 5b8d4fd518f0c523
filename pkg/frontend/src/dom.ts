/** Thin DOM binding: renders ConversationView snapshots and forwards
 * user input to the client. All behavior lives in client.ts/speech.ts. */

import { ChatClient, ConversationView } from "./client.js";
import { SpeechCapture } from "./speech.js";

export function mountChat(
  doc: Document,
  root: HTMLElement,
  client: ChatClient,
  speech: SpeechCapture,
): void {
  root.innerHTML = `
    <header class="chat-header">
      <h1>KatzGPT</h1>
      <span class="health" data-role="health"></span>
    </header>
    <div class="banner" data-role="banner" hidden>
      <span data-role="banner-text"></span>
      <button type="button" data-role="retry">Retry</button>
    </div>
    <main class="conversation" data-role="conversation"></main>
    <form class="composer" data-role="composer">
      <input type="text" data-role="input" autocomplete="off"
             placeholder="Type a message" aria-label="Message" />
      <button type="button" data-role="mic" title="Speak" hidden>&#127908;</button>
      <button type="submit" data-role="send">Send</button>
    </form>
  `;

  const byRole = <T extends HTMLElement>(role: string): T =>
    root.querySelector<T>(`[data-role="${role}"]`)!;
  const healthEl = byRole<HTMLSpanElement>("health");
  const banner = byRole<HTMLDivElement>("banner");
  const bannerText = byRole<HTMLSpanElement>("banner-text");
  const retryButton = byRole<HTMLButtonElement>("retry");
  const conversation = byRole<HTMLElement>("conversation");
  const composer = byRole<HTMLFormElement>("composer");
  const input = byRole<HTMLInputElement>("input");
  const micButton = byRole<HTMLButtonElement>("mic");
  const sendButton = byRole<HTMLButtonElement>("send");

  function renderTurns(view: ConversationView): void {
    conversation.textContent = "";
    if (view.turns.length === 0) {
      const placeholder = doc.createElement("div");
      placeholder.className = "placeholder";
      placeholder.textContent = "Ask me anything about campus life.";
      conversation.appendChild(placeholder);
      return;
    }
    for (const turn of view.turns) {
      const row = doc.createElement("div");
      row.className = `turn ${turn.author}`;
      const text = doc.createElement("span");
      text.className = "text";
      text.textContent = turn.text;
      row.appendChild(text);
      if (turn.author === "assistant" && turn.detectedLang) {
        const badge = doc.createElement("span");
        badge.className = "lang-badge";
        badge.textContent = turn.detectedLang;
        row.appendChild(badge);
      }
      conversation.appendChild(row);
    }
    conversation.scrollTop = conversation.scrollHeight;
  }

  function render(): void {
    const view = client.getView();
    renderTurns(view);
    banner.hidden = view.error === null;
    bannerText.textContent = view.error ?? "";
    retryButton.hidden = !view.canRetry;
    input.disabled = view.pending;
    sendButton.disabled = view.pending;
    micButton.disabled = view.pending;
    healthEl.textContent = view.health
      ? `${view.health.nBlocks} blocks · ${view.health.params.toLocaleString()} params`
      : "";
  }

  composer.addEventListener("submit", (event) => {
    event.preventDefault();
    if (client.getView().pending) return;
    const text = input.value;
    input.value = "";
    void client.send(text);
  });

  retryButton.addEventListener("click", () => {
    void client.retry();
  });

  if (speech.supported) {
    micButton.hidden = false;
    micButton.addEventListener("click", () => {
      speech.start(
        (transcript) => {
          input.value = transcript;
          input.focus();
        },
        (message) => {
          micButton.title = message;
        },
      );
    });
  }

  client.subscribe(render);
  render();
  void client.refreshHealth();
}
