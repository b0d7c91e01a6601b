import { describe, expect, it } from "vitest";

import { ApiClient, SchemaError, SseParser, checkReport } from "../src/api.js";
import {
  VALID_REPORT,
  jsonResponse,
  makeFetch,
  sseBody,
  streamResponse,
} from "./helpers.js";

describe("SseParser", () => {
  it("reassembles events split across arbitrary chunk boundaries", () => {
    const body = sseBody([
      { event: "step", data: { step_index: 0, tool_name: "lookup_course_content", observation_kind: "success" } },
      { event: "answer", data: { final_answer: "done", trajectory_id: "trajectory-1", termination: "answered" } },
    ]);
    for (const splitAt of [1, 7, 20, body.length - 3]) {
      const parser = new SseParser();
      const blocks = [
        ...parser.push(body.slice(0, splitAt)),
        ...parser.push(body.slice(splitAt)),
      ];
      expect(blocks.map((b) => b.event)).toEqual(["step", "answer"]);
      expect(JSON.parse(blocks[1]!.data).final_answer).toBe("done");
    }
  });

  it("ignores blocks without data", () => {
    const parser = new SseParser();
    expect(parser.push("event: ping\n\n")).toEqual([]);
  });
});

describe("schema checking", () => {
  it("accepts a well-formed report", () => {
    expect(checkReport(VALID_REPORT).components.praise).toContain("hypothesis");
  });

  it("rejects a report missing a component, naming the field", () => {
    const broken = structuredClone(VALID_REPORT) as { components: Record<string, string> };
    delete broken.components.praise;
    expect(() => checkReport(broken)).toThrow(SchemaError);
    expect(() => checkReport(broken)).toThrow(/components\.praise/);
  });

  it("rejects a report with an empty component", () => {
    const broken = structuredClone(VALID_REPORT);
    broken.components.current_state = "   ";
    expect(() => checkReport(broken)).toThrow(/components\.current_state/);
  });
});

describe("ApiClient.chat", () => {
  it("delivers step events then the answer", async () => {
    const body = sseBody([
      { event: "step", data: { step_index: 0, tool_name: "lookup_course_content", observation_kind: "success" } },
      { event: "step", data: { step_index: 1, tool_name: "answer", observation_kind: null } },
      { event: "answer", data: { final_answer: "Check the basis case.", trajectory_id: "trajectory-1", termination: "answered" } },
    ]);
    const { fetchFn } = makeFetch(() => streamResponse(body));
    const client = new ApiClient("", fetchFn);
    const steps: string[] = [];
    let answer = "";
    await client.chat("sess", "why?", {
      onStep: (step) => steps.push(step.tool_name),
      onAnswer: (event) => {
        answer = event.final_answer;
      },
      onError: (detail) => {
        throw new Error(detail);
      },
    });
    expect(steps).toEqual(["lookup_course_content", "answer"]);
    expect(answer).toBe("Check the basis case.");
  });

  it("reports a dropped stream as an error", async () => {
    const body = sseBody([
      { event: "step", data: { step_index: 0, tool_name: "lookup_course_content", observation_kind: "success" } },
    ]);
    const { fetchFn } = makeFetch(() => streamResponse(body));
    const client = new ApiClient("", fetchFn);
    let failure = "";
    await client.chat("sess", "why?", {
      onStep: () => undefined,
      onAnswer: () => {
        throw new Error("unexpected answer");
      },
      onError: (detail) => {
        failure = detail;
      },
    });
    expect(failure).toMatch(/stream closed/);
  });

  it("surfaces HTTP errors with the server detail", async () => {
    const { fetchFn } = makeFetch(() =>
      jsonResponse({ detail: "a chat or submission is already in progress" }, 409));
    const client = new ApiClient("", fetchFn);
    await expect(
      client.chat("sess", "hello", {
        onStep: () => undefined,
        onAnswer: () => undefined,
        onError: () => undefined,
      }),
    ).rejects.toThrow(/already in progress/);
  });
});
