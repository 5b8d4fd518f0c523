/** Entry point: wire the client to the real browser environment. */

import { createChatClient } from "./client.js";
import { mountChat } from "./dom.js";
import { createSpeechCapture } from "./speech.js";

const client = createChatClient({
  fetchFn: (url, init) => window.fetch(url, init),
  baseUrl: "",
  storage: window.sessionStorage,
});

const speech = createSpeechCapture();

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");
mountChat(document, root, client, speech);
