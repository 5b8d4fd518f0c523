/** DOM-agnostic conversation state for the chat UI.
 *
 * All I/O is injected (fetch, storage, clock) so the whole behavior —
 * optimistic turns, single in-flight request, session reuse, failure
 * banner with retry — is testable without a browser.
 */

import {
  ApiError,
  ChatRequest,
  FetchLike,
  getHealth,
  postChat,
} from "./api.js";

export interface Turn {
  author: "user" | "assistant";
  text: string;
  /** Language the server detected for the turn; null for user turns. */
  detectedLang: string | null;
  timestamp: number;
}

export interface ModelHealth {
  nBlocks: number;
  params: number;
}

/** Immutable snapshot handed to renderers. */
export interface ConversationView {
  sessionId: string | null;
  turns: readonly Turn[];
  pending: boolean;
  /** Banner text after a failed send, null when everything is fine. */
  error: string | null;
  /** True when a failed message is waiting to be resent. */
  canRetry: boolean;
  health: ModelHealth | null;
}

/** The subset of Web Storage the client uses (sessionStorage fits). */
export interface KeyValueStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export interface ChatClientOptions {
  fetchFn: FetchLike;
  /** Prefix for API routes, e.g. "" (same origin) or "http://host:port". */
  baseUrl?: string;
  /** Persists the session id across page reloads within a tab. */
  storage?: KeyValueStorage | null;
  now?: () => number;
}

export interface ChatClient {
  getView(): ConversationView;
  /** Registers a change listener; returns an unsubscribe function. */
  subscribe(listener: () => void): () => void;
  /** Sends a message. Resolves true if a reply arrived, false if the
   * input was empty, a request is already pending, or the send failed. */
  send(text: string): Promise<boolean>;
  /** Resends the last failed message without adding a new user turn. */
  retry(): Promise<boolean>;
  /** Fetches /v1/health into the view; resolves false on failure. */
  refreshHealth(): Promise<boolean>;
}

export const SESSION_STORAGE_KEY = "katzgpt.session";

export function createChatClient(options: ChatClientOptions): ChatClient {
  const fetchFn = options.fetchFn;
  const baseUrl = options.baseUrl ?? "";
  const storage = options.storage ?? null;
  const now = options.now ?? Date.now;

  let sessionId: string | null = storage?.getItem(SESSION_STORAGE_KEY) ?? null;
  const turns: Turn[] = [];
  let pending = false;
  let error: string | null = null;
  let failedMessage: string | null = null;
  let health: ModelHealth | null = null;
  const listeners = new Set<() => void>();

  function notify(): void {
    for (const listener of listeners) listener();
  }

  function setSession(id: string | null): void {
    sessionId = id;
    if (!storage) return;
    if (id === null) storage.removeItem(SESSION_STORAGE_KEY);
    else storage.setItem(SESSION_STORAGE_KEY, id);
  }

  async function perform(message: string): Promise<boolean> {
    pending = true;
    error = null;
    notify();

    const request: ChatRequest = { message, lang: "auto" };
    if (sessionId !== null) request.session_id = sessionId;
    try {
      const response = await postChat(fetchFn, baseUrl, request);
      setSession(response.session_id);
      turns.push({
        author: "assistant",
        text: response.reply,
        detectedLang: response.detected_lang,
        timestamp: now(),
      });
      failedMessage = null;
      return true;
    } catch (exc) {
      // A stale stored session (server restarted or expired it) comes back
      // as 404; drop the id so the retry opens a fresh session.
      if (exc instanceof ApiError && exc.status === 404 && sessionId !== null) {
        setSession(null);
      }
      error = exc instanceof Error ? exc.message : String(exc);
      failedMessage = message;
      return false;
    } finally {
      pending = false;
      notify();
    }
  }

  return {
    getView(): ConversationView {
      return {
        sessionId,
        turns: turns.slice(),
        pending,
        error,
        canRetry: failedMessage !== null,
        health,
      };
    },

    subscribe(listener: () => void): () => void {
      listeners.add(listener);
      return () => listeners.delete(listener);
    },

    async send(text: string): Promise<boolean> {
      const message = text.trim();
      if (message === "" || pending) return false;
      turns.push({
        author: "user",
        text: message,
        detectedLang: null,
        timestamp: now(),
      });
      failedMessage = null;
      return perform(message);
    },

    async retry(): Promise<boolean> {
      if (failedMessage === null || pending) return false;
      return perform(failedMessage);
    },

    async refreshHealth(): Promise<boolean> {
      try {
        const response = await getHealth(fetchFn, baseUrl);
        health = {
          nBlocks: response.model.n_blocks,
          params: response.model.params,
        };
        notify();
        return true;
      } catch {
        health = null;
        notify();
        return false;
      }
    },
  };
}
