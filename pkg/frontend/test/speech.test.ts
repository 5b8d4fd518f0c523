import { describe, expect, it } from "vitest";

import {
  createSpeechCapture,
  RecognitionErrorEvent,
  RecognitionResultEvent,
  SpeechRecognizer,
} from "../src/speech";

class FakeRecognizer implements SpeechRecognizer {
  static instances: FakeRecognizer[] = [];
  lang = "";
  interimResults = true;
  maxAlternatives = 0;
  onresult: ((event: RecognitionResultEvent) => void) | null = null;
  onerror: ((event: RecognitionErrorEvent) => void) | null = null;
  onend: (() => void) | null = null;
  started = false;

  constructor() {
    FakeRecognizer.instances.push(this);
  }

  start(): void {
    this.started = true;
  }

  stop(): void {
    this.onend?.();
  }

  emitResult(transcript: string): void {
    this.onresult?.({ results: [[{ transcript }]] });
    this.onend?.();
  }
}

function setup() {
  FakeRecognizer.instances = [];
  return createSpeechCapture({ recognizerFactory: FakeRecognizer });
}

describe("unsupported browsers", () => {
  it("reports unsupported when no recognizer exists", () => {
    const capture = createSpeechCapture({ recognizerFactory: null });
    expect(capture.supported).toBe(false);
    expect(capture.start(() => {})).toBe(false);
  });
});

describe("capture", () => {
  it("delivers the recognized transcript for the input box", () => {
    const capture = setup();
    expect(capture.supported).toBe(true);

    const transcripts: string[] = [];
    expect(capture.start((t) => transcripts.push(t))).toBe(true);

    const recognizer = FakeRecognizer.instances[0]!;
    expect(recognizer.started).toBe(true);
    expect(recognizer.interimResults).toBe(false);
    recognizer.emitResult("  when is orientation  ");

    // the transcript is handed over (trimmed); sending stays manual
    expect(transcripts).toEqual(["when is orientation"]);
    expect(capture.active).toBe(false);
  });

  it("ignores empty recognition results", () => {
    const capture = setup();
    const transcripts: string[] = [];
    capture.start((t) => transcripts.push(t));
    FakeRecognizer.instances[0]!.emitResult("   ");
    expect(transcripts).toEqual([]);
  });

  it("runs one capture at a time", () => {
    const capture = setup();
    expect(capture.start(() => {})).toBe(true);
    expect(capture.active).toBe(true);
    expect(capture.start(() => {})).toBe(false);
    expect(FakeRecognizer.instances).toHaveLength(1);

    capture.stop();
    expect(capture.active).toBe(false);
    expect(capture.start(() => {})).toBe(true);
  });

  it("maps a permission denial to a readable message", () => {
    const capture = setup();
    const errors: string[] = [];
    capture.start(
      () => {},
      (message) => errors.push(message),
    );
    FakeRecognizer.instances[0]!.onerror?.({ error: "not-allowed" });
    expect(errors).toEqual(["microphone permission denied"]);
  });
});
