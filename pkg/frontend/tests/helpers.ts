/** Shared test scaffolding: DOM skeleton, recording fetch mock, SSE bodies. */

import { ApiClient } from "../src/api.js";
import { App, AppElements } from "../src/app.js";

export interface RecordedRequest {
  method: string;
  path: string;
  body: unknown;
}

export type Responder = (method: string, path: string, init?: RequestInit) =>
  Response | Promise<Response>;

export function jsonResponse(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function makeFetch(responder: Responder): {
  fetchFn: typeof fetch;
  requests: RecordedRequest[];
} {
  const requests: RecordedRequest[] = [];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const path = String(input);
    const method = init?.method ?? "GET";
    let body: unknown = null;
    if (typeof init?.body === "string") {
      try {
        body = JSON.parse(init.body);
      } catch {
        body = init.body;
      }
    }
    requests.push({ method, path, body });
    return responder(method, path, init);
  }) as typeof fetch;
  return { fetchFn, requests };
}

export function sseBody(blocks: Array<{ event: string; data: unknown }>): string {
  return blocks
    .map(({ event, data }) => `event: ${event}\ndata: ${JSON.stringify(data)}\n\n`)
    .join("");
}

export function streamResponse(body: string): Response {
  const encoder = new TextEncoder();
  const stream = new ReadableStream<Uint8Array>({
    start(controller) {
      controller.enqueue(encoder.encode(body));
      controller.close();
    },
  });
  return new Response(stream, { headers: { "Content-Type": "text/event-stream" } });
}

/** A stream the test advances by hand, to observe mid-stream UI state. */
export function manualStream(): {
  response: Response;
  emit: (chunk: string) => void;
  close: () => void;
} {
  const encoder = new TextEncoder();
  let controller!: ReadableStreamDefaultController<Uint8Array>;
  const stream = new ReadableStream<Uint8Array>({
    start(c) {
      controller = c;
    },
  });
  return {
    response: new Response(stream, { headers: { "Content-Type": "text/event-stream" } }),
    emit: (chunk) => controller.enqueue(encoder.encode(chunk)),
    close: () => controller.close(),
  };
}

export function buildDom(): AppElements {
  document.body.innerHTML = "";
  const make = <T extends HTMLElement>(tag: string): T =>
    document.body.appendChild(document.createElement(tag)) as unknown as T;
  return {
    imageInput: make<HTMLInputElement>("input"),
    transcribeStatus: make<HTMLElement>("p"),
    solutionBox: make<HTMLTextAreaElement>("textarea"),
    submitButton: make<HTMLButtonElement>("button"),
    feedbackPanel: make<HTMLElement>("div"),
    chatInput: make<HTMLInputElement>("input"),
    sendButton: make<HTMLButtonElement>("button"),
    chatLog: make<HTMLElement>("div"),
    studyBadge: make<HTMLElement>("span"),
  };
}

export function makeApp(responder: Responder): {
  app: App;
  ui: AppElements;
  requests: RecordedRequest[];
} {
  const { fetchFn, requests } = makeFetch(responder);
  const ui = buildDom();
  const app = new App(new ApiClient("", fetchFn), ui);
  return { app, ui, requests };
}

export function sessionEnvelope(overrides: Partial<{
  transcript: string | null;
  report: unknown;
  trajectories: string[];
  study_goal: number | null;
  completed: boolean | null;
}> = {}): unknown {
  return {
    session: {
      session_id: "sess-test",
      context: {
        question_id: "q1",
        question_text: "Prove it.",
        student_solution: "",
        reference_solution: "Proof.",
        course_id: "dm101",
      },
      transcript: overrides.transcript ?? null,
      report: overrides.report ?? null,
      refinement_trace_ref: null,
      trajectories: overrides.trajectories ?? [],
      created_at: "2026-01-01T00:00:00+00:00",
    },
    completed: overrides.completed ?? null,
    study_goal: overrides.study_goal ?? null,
  };
}

export const VALID_REPORT = {
  components: {
    current_state: "You are missing the basis case.",
    task_next_steps: "Add the basis case for a single node.",
    strategy_next_steps: "Start proofs from the constructors.",
    self_regulated_next_steps: "Re-check each part against the definition.",
    praise: "Clean inductive hypothesis.",
  },
  generated_at: "2026-01-01T00:00:00+00:00",
  origin_iteration: 0,
};

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
