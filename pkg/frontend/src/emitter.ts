/**
 * Coalescing command sender.  Slider events arrive as fast as the browser
 * fires them; the wire sees at most one command per interval (>= 67 ms,
 * i.e. <= 15 messages per second), always carrying the newest values, and
 * nothing at all while the values match what was last sent.
 *
 * The clock and timer are injected so tests drive time explicitly.
 */

import { CommandMsg, Vec2 } from "./wire.js";

export interface EmitterOptions {
  /** Minimum spacing between sends, milliseconds.  Default 1000/15. */
  minIntervalMs?: number;
  now?: () => number;
  setTimer?: (fn: () => void, delayMs: number) => unknown;
  clearTimer?: (handle: unknown) => void;
  /** Called after a send fails twice in a row (banner time). */
  onFailure?: (err: unknown) => void;
}

type SendFn = (msg: CommandMsg) => void;

export class CommandEmitter {
  private readonly send: SendFn;
  private readonly minInterval: number;
  private readonly now: () => number;
  private readonly setTimer: (fn: () => void, delayMs: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;
  private readonly onFailure: (err: unknown) => void;

  private pending: CommandMsg | null = null;
  private lastSentText: string | null = null;
  private lastSentAt = -Infinity;
  private timer: unknown = null;

  constructor(send: SendFn, options: EmitterOptions = {}) {
    this.send = send;
    this.minInterval = options.minIntervalMs ?? 1000 / 15;
    this.now = options.now ?? (() => performance.now());
    this.setTimer = options.setTimer
      ?? ((fn, ms) => setTimeout(fn, ms) as unknown);
    this.clearTimer = options.clearTimer
      ?? ((h) => clearTimeout(h as ReturnType<typeof setTimeout>));
    this.onFailure = options.onFailure ?? (() => undefined);
  }

  /** Queue the newest values; sends now or at the end of the interval. */
  update(thetaRef: Vec2, kRef: number): void {
    this.pending = {
      type: "command",
      theta_ref: [thetaRef[0], thetaRef[1]],
      k_ref: kRef,
    };
    const wait = this.lastSentAt + this.minInterval - this.now();
    if (wait <= 0) {
      this.flush();
    } else if (this.timer === null) {
      this.timer = this.setTimer(() => {
        this.timer = null;
        this.flush();
      }, wait);
    }
    // a timer already pending will pick up this.pending when it fires
  }

  /** Send the queued command if it differs from the last one on the wire. */
  flush(): void {
    if (this.pending === null) return;
    const text = JSON.stringify(this.pending);
    if (text === this.lastSentText) {
      this.pending = null;
      return;
    }
    const msg = this.pending;
    this.pending = null;
    let lastErr: unknown = null;
    for (let attempt = 0; attempt < 2; attempt++) {
      try {
        this.send(msg);
        this.lastSentText = text;
        this.lastSentAt = this.now();
        return;
      } catch (err) {
        lastErr = err;
      }
    }
    this.onFailure(lastErr); // sent twice, failed twice: surface it
  }

  dispose(): void {
    if (this.timer !== null) {
      this.clearTimer(this.timer);
      this.timer = null;
    }
    this.pending = null;
  }
}
