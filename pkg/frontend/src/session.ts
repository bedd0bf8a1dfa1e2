// Session state machine: start or resume, advance item by item, submit one
// choice per item with rollback if the server rejects it. All state is
// reconstructible from server responses, so a refresh loses nothing.

import type { Choice, ItemView, Progress, StudyApi } from "./api.js";

export interface ChoiceEvent {
  itemId: string;
  choice: Choice;
  clientTs: number;
}

export type SessionState =
  | { kind: "idle" }
  | { kind: "item"; item: ItemView; submitting: boolean }
  | { kind: "done"; progress: Progress }
  | { kind: "error"; message: string };

export interface SessionStorage {
  load(): string | null;
  save(id: string): void;
}

export const memoryStorage = (): SessionStorage => {
  let value: string | null = null;
  return {
    load: () => value,
    save: (id) => {
      value = id;
    },
  };
};

export class StudySession {
  private state_: SessionState = { kind: "idle" };
  private sessionId_: string | null = null;
  private totalItems_ = 0;
  private votedItems = new Set<string>();
  readonly events: ChoiceEvent[] = [];

  constructor(
    private readonly api: StudyApi,
    private readonly storage: SessionStorage = memoryStorage(),
    private readonly now: () => number = Date.now,
  ) {}

  get state(): SessionState {
    return this.state_;
  }

  get sessionId(): string | null {
    return this.sessionId_;
  }

  get totalItems(): number {
    return this.totalItems_;
  }

  /** Start a new session, or resume the one in storage; then load the next
   * unvoted item (the server knows our progress). */
  async start(): Promise<SessionState> {
    try {
      const stored = this.storage.load();
      if (stored) {
        this.sessionId_ = stored;
      } else {
        const info = await this.api.startSession();
        this.sessionId_ = info.sessionId;
        this.totalItems_ = info.totalItems;
        this.storage.save(info.sessionId);
      }
      return await this.advance();
    } catch (err) {
      this.state_ = { kind: "error", message: String(err) };
      return this.state_;
    }
  }

  private async advance(): Promise<SessionState> {
    const next = await this.api.nextItem(this.sessionId_!);
    if (next.done) {
      this.totalItems_ = next.progress.total;
      this.state_ = { kind: "done", progress: next.progress };
    } else {
      this.totalItems_ = next.item.progress.total;
      this.state_ = { kind: "item", item: next.item, submitting: false };
    }
    return this.state_;
  }

  /** Submit the rater's choice for the current item. Repeat calls for the
   * same item (double-clicks) are ignored; a rejected vote rolls the UI
   * back to the same item. */
  async choose(choice: Choice): Promise<SessionState> {
    const state = this.state_;
    if (state.kind !== "item" || state.submitting) {
      return this.state_;
    }
    const item = state.item;
    if (this.votedItems.has(item.itemId)) {
      return this.state_;
    }
    this.events.push({ itemId: item.itemId, choice, clientTs: this.now() });
    // Optimistic: leave the item immediately; restore it on rejection.
    this.state_ = { kind: "item", item, submitting: true };
    try {
      const ack = await this.api.submitVote(this.sessionId_!, item.itemId, choice);
      if (!ack.ok) {
        this.state_ = { kind: "item", item, submitting: false };
        return this.state_;
      }
      this.votedItems.add(item.itemId);
      return await this.advance();
    } catch (err) {
      // Rollback: the vote did not land; the item stays votable.
      this.events.pop();
      this.state_ = { kind: "item", item, submitting: false };
      return this.state_;
    }
  }

  /** Re-sync from the server (refresh safety). */
  async refresh(): Promise<SessionState> {
    if (!this.sessionId_) {
      return this.state_;
    }
    try {
      return await this.advance();
    } catch (err) {
      this.state_ = { kind: "error", message: String(err) };
      return this.state_;
    }
  }
}
