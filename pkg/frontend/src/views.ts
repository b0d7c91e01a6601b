/**
 * DOM rendering. Section order and labels are fixed (stable for screen
 * readers); malformed documents surface as an error panel carrying the
 * session id, never a blank screen.
 */

import { COMPONENT_ORDER, ComponentName, FeedbackReport, StepEvent } from "./api.js";

export const SECTION_LABELS: Record<ComponentName, string> = {
  current_state: "Where you stand",
  task_next_steps: "Next steps on this task",
  strategy_next_steps: "Strategies to try",
  self_regulated_next_steps: "Checking your own work",
  praise: "What you did well",
};

const ACTIVITY_LABELS: Record<string, string> = {
  lookup_course_content: "consulting course materials…",
  lookup_prerequisites: "checking prerequisite topics…",
  behaviour_counterfactual: "thinking about study behaviours…",
  answer: "writing an answer…",
};

export function activityLabel(toolName: string): string {
  return ACTIVITY_LABELS[toolName] ?? "working…";
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderFeedback(report: FeedbackReport, container: HTMLElement): void {
  container.replaceChildren();
  for (const name of COMPONENT_ORDER) {
    const section = el("section", "feedback-section");
    section.dataset.component = name;
    section.appendChild(el("h3", "feedback-section-title", SECTION_LABELS[name]));
    section.appendChild(el("p", "feedback-section-text", report.components[name]));
    container.appendChild(section);
  }
}

export function renderErrorPanel(container: HTMLElement, sessionId: string,
                                 message: string): void {
  container.replaceChildren();
  const panel = el("div", "error-panel");
  panel.setAttribute("role", "alert");
  panel.appendChild(el("strong", undefined, "Something went wrong"));
  panel.appendChild(el("p", undefined, message));
  panel.appendChild(el("p", "error-session", `Session: ${sessionId}`));
  container.appendChild(panel);
}

export function appendChatQuestion(log: HTMLElement, text: string): void {
  log.appendChild(el("div", "chat-question", text));
}

export function appendActivity(log: HTMLElement, step: StepEvent): HTMLElement {
  const item = el("div", "chat-activity", activityLabel(step.tool_name));
  item.dataset.tool = step.tool_name;
  if (step.observation_kind === "error") item.classList.add("activity-error");
  log.appendChild(item);
  return item;
}

export function appendChatAnswer(log: HTMLElement, text: string): void {
  log.appendChild(el("div", "chat-answer", text));
}

export function appendChatNotice(log: HTMLElement, text: string): void {
  log.appendChild(el("div", "chat-notice", text));
}

export function updateStudyBadge(badge: HTMLElement, questionsAsked: number,
                                 studyGoal: number | null, reached: boolean): void {
  if (studyGoal === null) {
    badge.hidden = true;
    return;
  }
  badge.hidden = false;
  badge.textContent = reached
    ? `Goal reached: ${questionsAsked}/${studyGoal} questions asked 🎉`
    : `Questions asked: ${questionsAsked}/${studyGoal}`;
  badge.classList.toggle("badge-complete", reached);
}
