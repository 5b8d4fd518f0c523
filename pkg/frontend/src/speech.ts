/** Optional voice capture via the browser's built-in speech recognition.
 *
 * The recognizer constructor is injected (resolved from `window` by
 * default), so unsupported browsers simply report `supported: false` and
 * tests can drive a fake. Recognition results only fill the input field —
 * sending stays an explicit user action.
 */

export interface RecognitionResultEvent {
  results: ArrayLike<ArrayLike<{ transcript: string }>>;
}

export interface RecognitionErrorEvent {
  error: string;
}

/** Structural slice of the Web Speech API the capture uses. */
export interface SpeechRecognizer {
  lang: string;
  interimResults: boolean;
  maxAlternatives: number;
  onresult: ((event: RecognitionResultEvent) => void) | null;
  onerror: ((event: RecognitionErrorEvent) => void) | null;
  onend: (() => void) | null;
  start(): void;
  stop(): void;
}

export type RecognizerConstructor = new () => SpeechRecognizer;

export interface SpeechCaptureOptions {
  /** Defaults to window.SpeechRecognition / window.webkitSpeechRecognition. */
  recognizerFactory?: RecognizerConstructor | null;
  lang?: string;
}

export interface SpeechCapture {
  /** False when the browser has no recognition; hide the mic control. */
  readonly supported: boolean;
  /** True while a capture is running. */
  readonly active: boolean;
  /** Starts one capture. `onTranscript` receives a nonempty transcript
   * (never fired for empty results); `onError` receives a short message,
   * e.g. when microphone permission is denied. */
  start(
    onTranscript: (transcript: string) => void,
    onError?: (message: string) => void,
  ): boolean;
  stop(): void;
}

function defaultFactory(): RecognizerConstructor | null {
  if (typeof window === "undefined") return null;
  const w = window as unknown as {
    SpeechRecognition?: RecognizerConstructor;
    webkitSpeechRecognition?: RecognizerConstructor;
  };
  return w.SpeechRecognition ?? w.webkitSpeechRecognition ?? null;
}

export function createSpeechCapture(
  options: SpeechCaptureOptions = {},
): SpeechCapture {
  const factory =
    options.recognizerFactory !== undefined
      ? options.recognizerFactory
      : defaultFactory();
  const lang = options.lang ?? "en-US";
  let current: SpeechRecognizer | null = null;

  return {
    get supported(): boolean {
      return factory !== null;
    },

    get active(): boolean {
      return current !== null;
    },

    start(
      onTranscript: (transcript: string) => void,
      onError?: (message: string) => void,
    ): boolean {
      if (factory === null || current !== null) return false;
      const recognizer = new factory();
      recognizer.lang = lang;
      recognizer.interimResults = false;
      recognizer.maxAlternatives = 1;
      recognizer.onresult = (event) => {
        const transcript = (event.results[0]?.[0]?.transcript ?? "").trim();
        if (transcript !== "") onTranscript(transcript);
      };
      recognizer.onerror = (event) => {
        const message =
          event.error === "not-allowed"
            ? "microphone permission denied"
            : `speech recognition failed: ${event.error}`;
        onError?.(message);
      };
      recognizer.onend = () => {
        current = null;
      };
      current = recognizer;
      recognizer.start();
      return true;
    },

    stop(): void {
      current?.stop();
      current = null;
    },
  };
}
