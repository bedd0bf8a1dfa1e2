// Browser entry point: wires the session state machine to the DOM with
// click and arrow-key voting, plus an operator results screen at #results.

import { createApi } from "./api.js";
import { loadResults } from "./results.js";
import { memoryStorage, StudySession, type SessionStorage } from "./session.js";
import { renderResultsTable, renderState } from "./view.js";

function browserStorage(): SessionStorage {
  try {
    window.localStorage.getItem("study-session");
    return {
      load: () => window.localStorage.getItem("study-session"),
      save: (id) => window.localStorage.setItem("study-session", id),
    };
  } catch {
    return memoryStorage();
  }
}

export function mount(root: HTMLElement): void {
  const api = createApi("");
  const session = new StudySession(api, browserStorage());

  const paint = () => {
    root.innerHTML = renderState(session.state);
    root.querySelectorAll<HTMLButtonElement>(".crop-choice").forEach((button) => {
      button.addEventListener("click", async () => {
        await session.choose(button.dataset.choice === "right" ? "right" : "left");
        paint();
      });
    });
    root.querySelector<HTMLButtonElement>("#begin")?.addEventListener("click", async () => {
      await session.start();
      paint();
    });
    root.querySelector<HTMLButtonElement>("#retry")?.addEventListener("click", async () => {
      await session.start();
      paint();
    });
  };

  document.addEventListener("keydown", async (event) => {
    if (event.key !== "ArrowLeft" && event.key !== "ArrowRight") {
      return;
    }
    await session.choose(event.key === "ArrowLeft" ? "left" : "right");
    paint();
  });

  paint();
}

export async function mountResults(root: HTMLElement): Promise<void> {
  const api = createApi("");
  try {
    const { rows, raw } = await loadResults(api);
    root.innerHTML = renderResultsTable(rows, raw.total_votes);
  } catch (err) {
    root.innerHTML = `<p class="error">Results unavailable: ${String(err)}</p>`;
  }
}

declare global {
  interface Window {
    __studyUi?: { mount: typeof mount; mountResults: typeof mountResults };
  }
}

if (typeof document !== "undefined") {
  window.__studyUi = { mount, mountResults };
  const boot = () => {
    const root = document.getElementById("app");
    if (!root) {
      return;
    }
    if (window.location.hash === "#results") {
      void mountResults(root);
    } else {
      mount(root);
    }
  };
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", boot);
  } else {
    boot();
  }
}
