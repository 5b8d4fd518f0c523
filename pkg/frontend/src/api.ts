/** Typed access to the chat service's JSON API (/v1/chat, /v1/health). */

export interface ChatRequest {
  message: string;
  lang: "auto";
  session_id?: string;
}

export interface ChatResponse {
  session_id: string;
  reply: string;
  detected_lang: string;
  tokens_generated: number;
}

export interface HealthResponse {
  status: string;
  model: { n_blocks: number; params: number };
}

/** Minimal fetch shape so tests and non-window hosts can inject their own. */
export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<Response>;

/** A non-2xx reply; `message` carries the server's error text when present. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorText(res: Response): Promise<string> {
  try {
    const body: unknown = await res.json();
    if (body && typeof body === "object" && "error" in body) {
      const text = (body as { error: unknown }).error;
      if (typeof text === "string") return text;
    }
  } catch {
    // fall through to the generic message
  }
  return `request failed with status ${res.status}`;
}

export async function postChat(
  fetchFn: FetchLike,
  baseUrl: string,
  request: ChatRequest,
): Promise<ChatResponse> {
  const res = await fetchFn(`${baseUrl}/v1/chat`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(request),
  });
  if (!res.ok) throw new ApiError(res.status, await errorText(res));
  return (await res.json()) as ChatResponse;
}

export async function getHealth(
  fetchFn: FetchLike,
  baseUrl: string,
): Promise<HealthResponse> {
  const res = await fetchFn(`${baseUrl}/v1/health`);
  if (!res.ok) throw new ApiError(res.status, await errorText(res));
  return (await res.json()) as HealthResponse;
}
