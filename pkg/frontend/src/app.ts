/**
 * A/B/X rater session: typed API client, session state machine, and DOM
 * rendering. The server payload carries only trial ids and opaque media
 * URLs, so nothing identity-revealing can reach the DOM. One request is
 * in flight at a time and a trial only advances on a server acknowledgment.
 */

export type Choice = "A" | "B";

export interface TrialView {
  trial_id: string;
  x: string;
  a: string;
  b: string;
}

export interface TrialsPayload {
  session: string;
  trials: TrialView[];
  answered: string[];
}

export type PostResult =
  | { status: "recorded" }
  | { status: "conflict" }
  | { status: "error"; message: string };

export interface ApiClient {
  fetchTrials(session: string | null): Promise<TrialsPayload>;
  postResponse(session: string, trialId: string, choice: Choice): Promise<PostResult>;
}

export function makeApiClient(fetchFn: typeof fetch, base = ""): ApiClient {
  return {
    async fetchTrials(session) {
      const resp = await fetchFn(`${base}/api/trials/${session ?? "new"}`);
      if (!resp.ok) throw new Error(`trial fetch failed: ${resp.status}`);
      return (await resp.json()) as TrialsPayload;
    },
    async postResponse(session, trialId, choice) {
      let resp: Response;
      try {
        resp = await fetchFn(`${base}/api/response`, {
          method: "POST",
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify({ session, trial_id: trialId, choice }),
        });
      } catch (err) {
        return { status: "error", message: String(err) };
      }
      if (resp.status === 409) return { status: "conflict" };
      if (!resp.ok) return { status: "error", message: `server returned ${resp.status}` };
      return { status: "recorded" };
    },
  };
}

// ---------------------------------------------------------------------------
// session state machine

export type Phase = "choosing" | "submitting" | "done";

export interface SessionState {
  session: string;
  pending: TrialView[];
  index: number;
  total: number;
  alreadyAnswered: number;
  selection: Choice | null;
  phase: Phase;
  notice: string | null;
}

export function initSession(payload: TrialsPayload): SessionState {
  const answered = new Set(payload.answered);
  const pending = payload.trials.filter((t) => !answered.has(t.trial_id));
  return {
    session: payload.session,
    pending,
    index: 0,
    total: payload.trials.length,
    alreadyAnswered: answered.size,
    selection: null,
    phase: pending.length === 0 ? "done" : "choosing",
    notice: null,
  };
}

export function currentTrial(state: SessionState): TrialView | null {
  return state.phase === "done" ? null : state.pending[state.index];
}

export function select(state: SessionState, choice: Choice): SessionState {
  if (state.phase !== "choosing") return state;
  return { ...state, selection: choice, notice: null };
}

export function canSubmit(state: SessionState): boolean {
  return state.phase === "choosing" && state.selection !== null;
}

export function beginSubmit(state: SessionState): SessionState {
  if (!canSubmit(state)) throw new Error("submit is unreachable without a selection");
  return { ...state, phase: "submitting" };
}

export function resolveSubmit(state: SessionState, result: PostResult): SessionState {
  if (state.phase !== "submitting") return state;
  if (result.status === "error") {
    // keep the selection; the rater retries explicitly
    return {
      ...state,
      phase: "choosing",
      notice: `network problem (${result.message}) - press Submit to retry`,
    };
  }
  const notice = result.status === "conflict" ? "already answered - moving on" : null;
  const nextIndex = state.index + 1;
  if (nextIndex >= state.pending.length) {
    return { ...state, phase: "done", selection: null, index: nextIndex, notice };
  }
  return { ...state, phase: "choosing", selection: null, index: nextIndex, notice };
}

// ---------------------------------------------------------------------------
// rendering

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

function audioSlot(label: string, src: string): HTMLElement {
  const wrap = el("div", { class: "slot" });
  wrap.appendChild(el("h3", {}, label));
  wrap.appendChild(el("audio", { controls: "", src, preload: "none" }));
  return wrap;
}

export function renderState(root: HTMLElement, state: SessionState): void {
  root.textContent = "";
  if (state.phase === "done") {
    const doneBox = el("div", { class: "done" });
    doneBox.appendChild(el("h2", {}, "All trials answered"));
    doneBox.appendChild(
      el("p", {}, `Thank you! ${state.total} of ${state.total} trials are recorded.`),
    );
    if (state.notice) doneBox.appendChild(el("p", { class: "notice" }, state.notice));
    root.appendChild(doneBox);
    return;
  }
  const trial = currentTrial(state)!;
  const answeredSoFar = state.alreadyAnswered + state.index;

  root.appendChild(
    el("p", { class: "progress" }, `Trial ${answeredSoFar + 1} of ${state.total}`),
  );
  root.appendChild(
    el(
      "p",
      { class: "instructions" },
      "Listen to all three samples, then pick which candidate sounds like the same person as the reference.",
    ),
  );
  root.appendChild(audioSlot("Reference X", trial.x));
  root.appendChild(audioSlot("Candidate A", trial.a));
  root.appendChild(audioSlot("Candidate B", trial.b));

  const chooser = el("div", { class: "chooser", role: "radiogroup" });
  for (const choice of ["A", "B"] as Choice[]) {
    const btn = el(
      "button",
      {
        type: "button",
        "data-choice": choice,
        "aria-pressed": state.selection === choice ? "true" : "false",
        class: state.selection === choice ? "choice selected" : "choice",
      },
      `X sounds like ${choice}`,
    );
    chooser.appendChild(btn);
  }
  root.appendChild(chooser);

  const submit = el("button", { type: "button", "data-submit": "" }, "Submit");
  if (!canSubmit(state)) submit.setAttribute("disabled", "");
  root.appendChild(submit);

  if (state.notice) root.appendChild(el("p", { class: "notice" }, state.notice));
}

// ---------------------------------------------------------------------------
// controller

export interface SessionStorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const SESSION_KEY = "abx-session";

export async function runSession(
  root: HTMLElement,
  api: ApiClient,
  storage: SessionStorageLike,
): Promise<void> {
  let payload: TrialsPayload;
  try {
    payload = await api.fetchTrials(storage.getItem(SESSION_KEY));
  } catch (err) {
    root.textContent = "";
    root.appendChild(el("p", { class: "notice" }, `Cannot reach the test server: ${err}`));
    const retry = el("button", { type: "button", "data-retry": "" }, "Retry");
    retry.addEventListener("click", () => void runSession(root, api, storage));
    root.appendChild(retry);
    return;
  }
  storage.setItem(SESSION_KEY, payload.session);
  let state = initSession(payload);

  const update = (next: SessionState) => {
    state = next;
    renderState(root, state);
    wire();
  };

  const wire = () => {
    for (const btn of root.querySelectorAll<HTMLButtonElement>("button[data-choice]")) {
      btn.addEventListener("click", () => update(select(state, btn.dataset.choice as Choice)));
    }
    const submit = root.querySelector<HTMLButtonElement>("button[data-submit]");
    if (submit) {
      submit.addEventListener("click", () => {
        if (!canSubmit(state)) return;
        const trial = currentTrial(state)!;
        const choice = state.selection!;
        update(beginSubmit(state));
        void api
          .postResponse(state.session, trial.trial_id, choice)
          .then((result) => update(resolveSubmit(state, result)));
      });
    }
  };

  update(state);
}
