/**
 * Typed client for the feedback service API.
 *
 * Every server document is schema-checked at this boundary: a missing or
 * mistyped field throws a SchemaError naming the offending field instead of
 * rendering a half-empty view. The chat endpoint is POST-based server-sent
 * events, parsed from the fetch body stream.
 */

export const COMPONENT_ORDER = [
  "current_state",
  "task_next_steps",
  "strategy_next_steps",
  "self_regulated_next_steps",
  "praise",
] as const;

export type ComponentName = (typeof COMPONENT_ORDER)[number];

export interface FeedbackReport {
  components: Record<ComponentName, string>;
  generated_at: string;
  origin_iteration: number;
}

export interface SessionDoc {
  session_id: string;
  transcript: string | null;
  report: FeedbackReport | null;
  trajectories: string[];
  created_at: string;
}

export interface SessionEnvelope {
  session: SessionDoc;
  completed: boolean | null;
  study_goal: number | null;
}

export interface SolutionResult {
  report_id: string;
  iterations_used: number;
  termination: string;
  report: FeedbackReport;
}

export interface StepEvent {
  step_index: number;
  tool_name: string;
  observation_kind: string | null;
}

export interface AnswerEvent {
  final_answer: string;
  trajectory_id: string;
  termination: string;
}

export interface ChatHandlers {
  onStep: (step: StepEvent) => void;
  onAnswer: (answer: AnswerEvent) => void;
  onError: (detail: string) => void;
}

export class SchemaError extends Error {
  constructor(doc: string, field: string) {
    super(`${doc}: bad or missing field '${field}'`);
    this.name = "SchemaError";
  }
}

export class ApiError extends Error {
  readonly status: number;
  constructor(status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
  }
}

function requireString(doc: string, data: Record<string, unknown>, field: string): string {
  const value = data[field];
  if (typeof value !== "string") throw new SchemaError(doc, field);
  return value;
}

function requireNumber(doc: string, data: Record<string, unknown>, field: string): number {
  const value = data[field];
  if (typeof value !== "number") throw new SchemaError(doc, field);
  return value;
}

function asObject(doc: string, value: unknown, field: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new SchemaError(doc, field);
  }
  return value as Record<string, unknown>;
}

export function checkReport(value: unknown): FeedbackReport {
  const data = asObject("FeedbackReport", value, "(root)");
  const components = asObject("FeedbackReport", data.components, "components");
  for (const name of COMPONENT_ORDER) {
    const text = components[name];
    if (typeof text !== "string" || text.trim() === "") {
      throw new SchemaError("FeedbackReport", `components.${name}`);
    }
  }
  return {
    components: components as Record<ComponentName, string>,
    generated_at: requireString("FeedbackReport", data, "generated_at"),
    origin_iteration: requireNumber("FeedbackReport", data, "origin_iteration"),
  };
}

function checkSession(value: unknown): SessionEnvelope {
  const envelope = asObject("SessionEnvelope", value, "(root)");
  const session = asObject("SessionEnvelope", envelope.session, "session");
  const transcript = session.transcript;
  if (transcript !== null && typeof transcript !== "string") {
    throw new SchemaError("Session", "transcript");
  }
  const trajectories = session.trajectories;
  if (!Array.isArray(trajectories)) throw new SchemaError("Session", "trajectories");
  return {
    session: {
      session_id: requireString("Session", session, "session_id"),
      transcript: transcript as string | null,
      report: session.report === null ? null : checkReport(session.report),
      trajectories: trajectories.map(String),
      created_at: requireString("Session", session, "created_at"),
    },
    completed: typeof envelope.completed === "boolean" ? envelope.completed : null,
    study_goal: typeof envelope.study_goal === "number" ? envelope.study_goal : null,
  };
}

function checkStep(value: unknown): StepEvent {
  const data = asObject("StepEvent", value, "(root)");
  return {
    step_index: requireNumber("StepEvent", data, "step_index"),
    tool_name: requireString("StepEvent", data, "tool_name"),
    observation_kind: data.observation_kind === null
      ? null
      : requireString("StepEvent", data, "observation_kind"),
  };
}

function checkAnswer(value: unknown): AnswerEvent {
  const data = asObject("AnswerEvent", value, "(root)");
  return {
    final_answer: requireString("AnswerEvent", data, "final_answer"),
    trajectory_id: requireString("AnswerEvent", data, "trajectory_id"),
    termination: requireString("AnswerEvent", data, "termination"),
  };
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { detail?: string };
    return body.detail ?? `HTTP ${response.status}`;
  } catch {
    return `HTTP ${response.status}`;
  }
}

/** Incremental parser for an SSE byte stream: yields (event, data) blocks. */
export class SseParser {
  private buffer = "";

  push(chunk: string): Array<{ event: string; data: string }> {
    this.buffer += chunk;
    const blocks: Array<{ event: string; data: string }> = [];
    let boundary = this.buffer.indexOf("\n\n");
    while (boundary >= 0) {
      const raw = this.buffer.slice(0, boundary);
      this.buffer = this.buffer.slice(boundary + 2);
      let event = "message";
      const dataLines: string[] = [];
      for (const line of raw.split("\n")) {
        if (line.startsWith("event:")) event = line.slice(6).trim();
        else if (line.startsWith("data:")) dataLines.push(line.slice(5).trim());
      }
      if (dataLines.length > 0) blocks.push({ event, data: dataLines.join("\n") });
      boundary = this.buffer.indexOf("\n\n");
    }
    return blocks;
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) throw new ApiError(response.status, await errorDetail(response));
    return response;
  }

  private async json(path: string, init?: RequestInit): Promise<unknown> {
    return (await this.request(path, init)).json();
  }

  async createSession(courseId: string, questionId: string): Promise<SessionEnvelope> {
    return checkSession(await this.json("/api/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ course_id: courseId, question_id: questionId }),
    }));
  }

  async getSession(sessionId: string): Promise<SessionEnvelope> {
    return checkSession(await this.json(`/api/sessions/${sessionId}`));
  }

  async transcribe(sessionId: string, image: Blob): Promise<string> {
    const form = new FormData();
    form.append("image", image, "solution.png");
    const body = asObject("Transcript", await this.json(
      `/api/sessions/${sessionId}/transcribe`, { method: "POST", body: form }), "(root)");
    return requireString("Transcript", body, "transcript");
  }

  async updateTranscript(sessionId: string, text: string): Promise<void> {
    await this.request(`/api/sessions/${sessionId}/transcript`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
  }

  async submitSolution(sessionId: string, solutionText: string, blank = false):
      Promise<SolutionResult> {
    const data = asObject("SolutionResult", await this.json(
      `/api/sessions/${sessionId}/solution`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ solution_text: solutionText, blank }),
      }), "(root)");
    return {
      report_id: requireString("SolutionResult", data, "report_id"),
      iterations_used: requireNumber("SolutionResult", data, "iterations_used"),
      termination: requireString("SolutionResult", data, "termination"),
      report: checkReport(data.report),
    };
  }

  async getTrajectory(sessionId: string, trajectoryId: string):
      Promise<{ final_answer: string }> {
    const data = asObject("Trajectory", await this.json(
      `/api/sessions/${sessionId}/trajectories/${trajectoryId}`), "(root)");
    return { final_answer: requireString("Trajectory", data, "final_answer") };
  }

  /**
   * Stream one chat exchange. Resolves once the stream closes; an answer (or
   * error) event will have been delivered to the handlers by then.
   */
  async chat(sessionId: string, message: string, handlers: ChatHandlers): Promise<void> {
    const response = await this.request(`/api/sessions/${sessionId}/chat`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ message }),
    });
    if (!response.body) {
      handlers.onError("response had no body");
      return;
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    let sawTerminal = false;
    while (true) {
      const { done, value } = await reader.read();
      if (done) break;
      for (const block of parser.push(decoder.decode(value, { stream: true }))) {
        try {
          const payload: unknown = JSON.parse(block.data);
          if (block.event === "step") handlers.onStep(checkStep(payload));
          else if (block.event === "answer") {
            sawTerminal = true;
            handlers.onAnswer(checkAnswer(payload));
          } else if (block.event === "error") {
            sawTerminal = true;
            const detail = asObject("ErrorEvent", payload, "(root)").detail;
            handlers.onError(typeof detail === "string" ? detail : "agent error");
          }
        } catch (error) {
          sawTerminal = true;
          handlers.onError(error instanceof Error ? error.message : String(error));
        }
      }
    }
    if (!sawTerminal) handlers.onError("stream closed before the answer arrived");
  }
}
