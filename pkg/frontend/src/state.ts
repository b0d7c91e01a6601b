/**
 * Session state machine for the student workflow.
 *
 * Phases: draft → (transcribing → reviewing_transcript) → awaiting_feedback
 * → feedback_ready ⇄ chat_streaming. Chat controls are enabled only in
 * feedback_ready; while a reply streams, sending is disabled, which also
 * guarantees the client never issues overlapping chat requests.
 */

export type Phase =
  | "draft"
  | "transcribing"
  | "reviewing_transcript"
  | "awaiting_feedback"
  | "feedback_ready"
  | "chat_streaming";

export class IllegalTransition extends Error {
  constructor(from: Phase, action: string) {
    super(`cannot ${action} while in phase '${from}'`);
    this.name = "IllegalTransition";
  }
}

export class UiSessionState {
  phase: Phase = "draft";
  questionsAsked = 0;
  studyGoal: number | null = null;

  get canSendChat(): boolean {
    return this.phase === "feedback_ready";
  }

  get canSubmit(): boolean {
    return this.phase === "draft" || this.phase === "reviewing_transcript";
  }

  get studyGoalReached(): boolean {
    return this.studyGoal !== null && this.questionsAsked >= this.studyGoal;
  }

  beginTranscription(): void {
    if (this.phase !== "draft" && this.phase !== "reviewing_transcript") {
      throw new IllegalTransition(this.phase, "start transcription");
    }
    this.phase = "transcribing";
  }

  transcriptReady(): void {
    if (this.phase !== "transcribing") {
      throw new IllegalTransition(this.phase, "receive a transcript");
    }
    this.phase = "reviewing_transcript";
  }

  transcriptionFailed(): void {
    if (this.phase === "transcribing") this.phase = "draft";
  }

  beginSubmission(): void {
    if (!this.canSubmit) throw new IllegalTransition(this.phase, "submit");
    this.phase = "awaiting_feedback";
  }

  submissionFailed(): void {
    if (this.phase === "awaiting_feedback") this.phase = "reviewing_transcript";
  }

  feedbackReady(): void {
    if (this.phase !== "awaiting_feedback") {
      throw new IllegalTransition(this.phase, "receive feedback");
    }
    this.phase = "feedback_ready";
  }

  beginChat(): void {
    if (!this.canSendChat) throw new IllegalTransition(this.phase, "send a question");
    this.phase = "chat_streaming";
  }

  answerReceived(): void {
    if (this.phase !== "chat_streaming") {
      throw new IllegalTransition(this.phase, "receive an answer");
    }
    this.questionsAsked += 1;
    this.phase = "feedback_ready";
  }

  chatFailed(): void {
    if (this.phase === "chat_streaming") this.phase = "feedback_ready";
  }
}
