/**
 * Panel state machine: connection status, the latest plant state, slider
 * values, and the recording lifecycle.  Pure data in, data out — the DOM
 * and the websocket live in main.ts, so every rule here is unit-testable.
 *
 * The view never simulates anything: what is drawn is exactly the last
 * state message plus the local slider values.
 */

import {
  clamp,
  HelloMsg,
  Material,
  RecordMsg,
  recordStartMessage,
  recordStopMessage,
  ServerMsg,
  StateMsg,
  Vec2,
} from "./wire.js";

export type Connection = "connecting" | "open" | "closed";

/** idle -> starting -> recording -> stopping -> idle; errors fall back. */
export type RecordingPhase = "idle" | "starting" | "recording" | "stopping";

export interface Sliders {
  theta0: number;
  theta1: number;
  k: number;
}

export class SessionView {
  connection: Connection = "connecting";
  hello: HelloMsg | null = null;
  state: StateMsg | null = null;
  sliders: Sliders | null = null;
  recording: RecordingPhase = "idle";
  materialTag = "";
  lastError = "";
  lastEpisode: string | null = null;
  lastEpisodeSteps = 0;

  handleOpen(): void {
    this.connection = "open";
  }

  handleClose(): void {
    this.connection = "closed";
    if (this.recording === "starting") this.recording = "idle";
  }

  handleMessage(msg: ServerMsg): void {
    switch (msg.type) {
      case "hello":
        this.hello = msg;
        this.initSliders();
        return;
      case "state":
        this.state = msg; // latest wins; earlier states are simply dropped
        this.initSliders();
        return;
      case "record_ack":
        if (msg.action === "start") {
          this.recording = "recording";
        } else {
          this.recording = "idle";
          this.lastEpisode = msg.episode;
          this.lastEpisodeSteps = msg.steps;
          if (msg.flagged) this.lastError = "recording was cut short and flagged";
        }
        return;
      case "error":
        this.lastError = msg.msg;
        // a rejected record request never received its ack; fall back to
        // the last stable phase so the panel does not freeze forever
        if (this.recording === "starting") this.recording = "idle";
        else if (this.recording === "stopping") this.recording = "recording";
        return;
    }
  }

  /** Sliders come alive at the arm's actual pose, mid-range stiffness. */
  private initSliders(): void {
    if (this.sliders !== null || this.hello === null || this.state === null) {
      return;
    }
    const lim = this.hello.limits;
    this.sliders = {
      theta0: clamp(this.state.theta[0], lim.theta_lo[0], lim.theta_hi[0]),
      theta1: clamp(this.state.theta[1], lim.theta_lo[1], lim.theta_hi[1]),
      k: 0.5 * (lim.k_lo + lim.k_hi),
    };
  }

  /**
   * Sliders are frozen while disconnected and between a stop request and
   * its ack, so the recorded episode ends exactly where the driver stopped.
   */
  slidersFrozen(): boolean {
    return this.connection !== "open" || this.sliders === null
      || this.recording === "stopping";
  }

  /** Apply a slider move; the stored value is clamped to the limits. */
  setSlider(name: keyof Sliders, value: number): Sliders | null {
    if (this.slidersFrozen() || this.sliders === null || this.hello === null) {
      return null;
    }
    const lim = this.hello.limits;
    const bounds: Record<keyof Sliders, [number, number]> = {
      theta0: [lim.theta_lo[0], lim.theta_hi[0]],
      theta1: [lim.theta_lo[1], lim.theta_hi[1]],
      k: [lim.k_lo, lim.k_hi],
    };
    const [lo, hi] = bounds[name];
    this.sliders = { ...this.sliders, [name]: clamp(value, lo, hi) };
    return this.sliders;
  }

  commandTarget(): { theta_ref: Vec2; k_ref: number } | null {
    if (this.sliders === null) return null;
    return {
      theta_ref: [this.sliders.theta0, this.sliders.theta1],
      k_ref: this.sliders.k,
    };
  }

  /** Returns the message to send, or null when starting is not allowed. */
  requestRecordStart(material: Material): RecordMsg | null {
    if (this.connection !== "open" || this.recording !== "idle") return null;
    if (!Number.isFinite(material.c_damp) || material.c_damp <= 0
      || !Number.isFinite(material.c_mass) || material.c_mass <= 0) {
      this.lastError = "material needs positive damping and mass scales";
      return null;
    }
    this.recording = "starting";
    this.materialTag = `cd${material.c_damp}_cm${material.c_mass}`;
    return recordStartMessage(material);
  }

  /** Returns the message to send, or null when nothing is being recorded. */
  requestRecordStop(): RecordMsg | null {
    if (this.connection !== "open" || this.recording !== "recording") return null;
    this.recording = "stopping";
    return recordStopMessage();
  }
}
