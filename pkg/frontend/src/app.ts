/**
 * Controller wiring the API client, the state machine and the DOM.
 *
 * Workflow guarantees:
 *  - the edited transcript is PUT before the solution is POSTed, so the
 *    server always receives what the student reviewed, never a raw draft;
 *  - submit stays disabled while the solution box is empty;
 *  - chat input is disabled outside feedback_ready (no overlapping chats);
 *  - a dropped stream falls back to fetching the persisted trajectory.
 */

import { ApiClient, ApiError, SessionEnvelope } from "./api.js";
import { UiSessionState } from "./state.js";
import {
  appendActivity,
  appendChatAnswer,
  appendChatNotice,
  appendChatQuestion,
  renderErrorPanel,
  renderFeedback,
  updateStudyBadge,
} from "./views.js";

export interface AppElements {
  imageInput: HTMLInputElement;
  transcribeStatus: HTMLElement;
  solutionBox: HTMLTextAreaElement;
  submitButton: HTMLButtonElement;
  feedbackPanel: HTMLElement;
  chatInput: HTMLInputElement;
  sendButton: HTMLButtonElement;
  chatLog: HTMLElement;
  studyBadge: HTMLElement;
}

export class App {
  readonly state = new UiSessionState();
  private sessionId = "";

  constructor(private readonly api: ApiClient, private readonly ui: AppElements) {
    ui.imageInput.addEventListener("change", () => void this.onImageSelected());
    ui.solutionBox.addEventListener("input", () => this.refreshControls());
    ui.submitButton.addEventListener("click", () => void this.onSubmit());
    ui.sendButton.addEventListener("click", () => void this.onSend());
    ui.chatInput.addEventListener("keydown", (event) => {
      if ((event as KeyboardEvent).key === "Enter") void this.onSend();
    });
  }

  async start(courseId: string, questionId: string): Promise<void> {
    const envelope = await this.api.createSession(courseId, questionId);
    this.adopt(envelope);
  }

  /** Adopt an existing session (page reload, tests). */
  adopt(envelope: SessionEnvelope): void {
    this.sessionId = envelope.session.session_id;
    this.state.studyGoal = envelope.study_goal;
    this.state.questionsAsked = envelope.session.trajectories.length;
    if (envelope.session.transcript !== null) {
      this.ui.solutionBox.value = envelope.session.transcript;
    }
    if (envelope.session.report !== null) {
      renderFeedback(envelope.session.report, this.ui.feedbackPanel);
      this.state.phase = "feedback_ready";
    }
    this.refreshControls();
  }

  get session(): string {
    return this.sessionId;
  }

  refreshControls(): void {
    const { ui, state } = this;
    ui.submitButton.disabled = !state.canSubmit || ui.solutionBox.value.trim() === "";
    ui.submitButton.title = ui.solutionBox.value.trim() === ""
      ? "Type or transcribe your solution first"
      : "";
    const chatEnabled = state.canSendChat;
    ui.chatInput.disabled = !chatEnabled;
    ui.sendButton.disabled = !chatEnabled;
    ui.solutionBox.disabled = state.phase === "transcribing"
      || state.phase === "awaiting_feedback";
    updateStudyBadge(this.ui.studyBadge, state.questionsAsked, state.studyGoal,
                     state.studyGoalReached);
  }

  /** Photo upload → editable transcript; manual typing stays available. */
  async onImageSelected(): Promise<void> {
    const file = this.ui.imageInput.files?.[0];
    if (!file) return;
    this.state.beginTranscription();
    this.ui.transcribeStatus.textContent = "Transcribing your photo…";
    this.refreshControls();
    try {
      const transcript = await this.api.transcribe(this.sessionId, file);
      this.state.transcriptReady();
      this.ui.solutionBox.value = transcript;
      this.ui.transcribeStatus.textContent =
        "Check the transcription below and fix anything that is wrong before submitting.";
    } catch (error) {
      this.state.transcriptionFailed();
      this.ui.transcribeStatus.textContent = error instanceof ApiError && error.status === 501
        ? "Automatic transcription is not available here; please type your solution."
        : `Transcription failed (${String(error)}); you can retry or type your solution.`;
    }
    this.refreshControls();
  }

  /** The edited text is synced to the server before the solution is posted. */
  async onSubmit(): Promise<void> {
    const text = this.ui.solutionBox.value;
    if (text.trim() === "" || !this.state.canSubmit) return;
    this.state.beginSubmission();
    this.refreshControls();
    try {
      await this.api.updateTranscript(this.sessionId, text);
      const result = await this.api.submitSolution(this.sessionId, text);
      renderFeedback(result.report, this.ui.feedbackPanel);
      this.state.feedbackReady();
    } catch (error) {
      this.state.submissionFailed();
      renderErrorPanel(this.ui.feedbackPanel, this.sessionId, String(error));
    }
    this.refreshControls();
  }

  async onSend(): Promise<void> {
    const message = this.ui.chatInput.value.trim();
    if (message === "" || !this.state.canSendChat) return;
    this.state.beginChat();
    this.ui.chatInput.value = "";
    appendChatQuestion(this.ui.chatLog, message);
    this.refreshControls();
    let answered = false;
    let lastTrajectoryId = "";
    try {
      await this.api.chat(this.sessionId, message, {
        onStep: (step) => appendActivity(this.ui.chatLog, step),
        onAnswer: (answer) => {
          answered = true;
          lastTrajectoryId = answer.trajectory_id;
          appendChatAnswer(this.ui.chatLog, answer.final_answer);
        },
        onError: (detail) => appendChatNotice(this.ui.chatLog, detail),
      });
    } catch (error) {
      appendChatNotice(this.ui.chatLog, String(error));
    }
    if (!answered) {
      // the server persists before the terminal event: recover the record
      answered = await this.recoverAnswer();
    }
    if (answered) {
      this.state.answerReceived();
    } else {
      this.state.chatFailed();
    }
    void lastTrajectoryId;
    this.refreshControls();
  }

  private async recoverAnswer(): Promise<boolean> {
    try {
      const envelope = await this.api.getSession(this.sessionId);
      const latest = envelope.session.trajectories.at(-1);
      if (!latest || envelope.session.trajectories.length <= this.state.questionsAsked) {
        return false;
      }
      const trajectory = await this.api.getTrajectory(this.sessionId, latest);
      appendChatAnswer(this.ui.chatLog, trajectory.final_answer);
      return true;
    } catch {
      return false;
    }
  }
}
