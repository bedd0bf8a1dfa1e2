// Typed client for the study service HTTP API. The fetch implementation is
// injectable so tests can fake the network.

export interface SessionInfo {
  sessionId: string;
  totalItems: number;
}

export interface Progress {
  done: number;
  total: number;
}

export interface ItemView {
  itemId: string;
  leftUrl: string;
  rightUrl: string;
  progress: Progress;
}

export type NextItem = { done: true; progress: Progress } | { done: false; item: ItemView };

export type Choice = "left" | "right";

export interface VoteAck {
  ok: boolean;
  counted: boolean;
}

export interface PairResult {
  method_a: string;
  method_b: string;
  votes_a: number;
  votes_b: number;
  rate_a: number;
  rate_b: number;
}

export interface StudyResults {
  pairs: PairResult[];
  total_votes: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status?: number,
  ) {
    super(message);
  }
}

async function asJson(resp: Response): Promise<unknown> {
  if (!resp.ok) {
    throw new ApiError(`server returned ${resp.status}`, resp.status);
  }
  return resp.json();
}

export interface StudyApi {
  startSession(): Promise<SessionInfo>;
  nextItem(sessionId: string): Promise<NextItem>;
  submitVote(sessionId: string, itemId: string, choice: Choice): Promise<VoteAck>;
  results(): Promise<StudyResults>;
}

export function createApi(baseUrl = "", fetchFn: FetchLike = fetch): StudyApi {
  return {
    async startSession(): Promise<SessionInfo> {
      const body = (await asJson(await fetchFn(`${baseUrl}/api/session`, { method: "POST" }))) as {
        session_id: string;
        total_items: number;
      };
      return { sessionId: body.session_id, totalItems: body.total_items };
    },

    async nextItem(sessionId: string): Promise<NextItem> {
      const body = (await asJson(
        await fetchFn(`${baseUrl}/api/items/next?session=${encodeURIComponent(sessionId)}`),
      )) as {
        done: boolean;
        item_id?: string;
        left_png_url?: string;
        right_png_url?: string;
        progress: Progress;
      };
      if (body.done) {
        return { done: true, progress: body.progress };
      }
      return {
        done: false,
        item: {
          itemId: body.item_id!,
          leftUrl: body.left_png_url!,
          rightUrl: body.right_png_url!,
          progress: body.progress,
        },
      };
    },

    async submitVote(sessionId: string, itemId: string, choice: Choice): Promise<VoteAck> {
      const body = (await asJson(
        await fetchFn(`${baseUrl}/api/vote`, {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify({ session: sessionId, item_id: itemId, choice }),
        }),
      )) as VoteAck;
      return body;
    },

    async results(): Promise<StudyResults> {
      return (await asJson(await fetchFn(`${baseUrl}/api/results`))) as StudyResults;
    },
  };
}
