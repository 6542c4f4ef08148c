import type { ServiceClient } from "./api.js";
import { ApiError } from "./api.js";
import { drawMel, gridLineFractions } from "./mel.js";
import type { LabelSelection, SegmentCardDTO } from "./types.js";
import { submittable } from "./types.js";

type Phase = "open" | "submitting" | "locked" | "conflict";

type Refs = {
  melCanvas: HTMLCanvasElement;
  gridOverlay: HTMLElement;
  audio: HTMLAudioElement;
  contextToggle: HTMLInputElement;
  chipRow: HTMLElement;
  submitButton: HTMLButtonElement;
  statusLine: HTMLElement;
};

const styles = `
  :host { display: block; }
  .card {
    border: 1px solid #2c3240;
    border-radius: 8px;
    background: #161a22;
    padding: 12px;
    display: grid;
    gap: 10px;
  }
  .card.active { border-color: #5b8def; }
  .card.locked { opacity: 0.75; }
  header {
    display: flex;
    justify-content: space-between;
    font: 12px/1.4 ui-monospace, monospace;
    color: #9aa4b5;
  }
  .mel-wrap { position: relative; height: 96px; background: #000; border-radius: 4px; overflow: hidden; }
  .mel-wrap canvas {
    width: 100%; height: 100%; display: block;
    image-rendering: pixelated;
  }
  .grid-overlay { position: absolute; inset: 0; pointer-events: none; }
  .grid-overlay .tick {
    position: absolute; top: 0; bottom: 0; width: 1px;
    background: rgba(255, 255, 255, 0.28);
  }
  .audio-row { display: flex; align-items: center; gap: 10px; }
  .audio-row audio { flex: 1; height: 30px; }
  .audio-row label { font: 12px/1 system-ui, sans-serif; color: #9aa4b5; display: flex; gap: 4px; align-items: center; }
  .chips { display: flex; flex-wrap: wrap; gap: 6px; }
  .chip {
    border: 1px solid #3a4152;
    border-radius: 999px;
    background: #1d222d;
    color: #c8d0dd;
    padding: 5px 12px;
    font: 13px/1 system-ui, sans-serif;
    cursor: pointer;
  }
  .chip.on { background: #2f5fb3; border-color: #5b8def; color: #fff; }
  .chip.none.on { background: #6b4a1f; border-color: #c98a2e; }
  .chip:disabled { cursor: default; opacity: 0.6; }
  .chip .key { opacity: 0.55; margin-right: 5px; }
  .actions { display: flex; align-items: center; gap: 10px; }
  .submit {
    border: 0; border-radius: 6px; padding: 7px 16px;
    background: #3f8f4f; color: #fff; font: 13px/1 system-ui, sans-serif;
    cursor: pointer;
  }
  .submit:disabled { background: #2a3342; color: #76808f; cursor: default; }
  .status { font: 12px/1.3 system-ui, sans-serif; color: #9aa4b5; }
  .status.error { color: #e07a6a; }
`;

/**
 * One annotation candidate: spectrogram, audio, class chips, submit.
 *
 * The card edits only a local label selection; annotation state changes
 * solely on a server ack. A conflict answer means another client got
 * there first, so the card reports upward and asks for a refresh
 * instead of guessing.
 */
export class SegmentCard extends HTMLElement {
  segment!: SegmentCardDTO;
  classNames!: string[];
  client!: ServiceClient;
  project!: string;

  private root!: ShadowRoot;
  private refs!: Refs;
  private selection: LabelSelection = { classes: new Set(), noEvents: false };
  private phase: Phase = "open";
  private ackLabels: string[] | null = null;

  connectedCallback() {
    this.root = this.shadowRoot ?? this.attachShadow({ mode: "open" });
    this.render();
    void this.loadMel();
  }

  get isOpen(): boolean {
    return this.phase === "open";
  }

  private render() {
    const seg = this.segment;
    const dur = (seg.end_s - seg.start_s).toFixed(2);
    this.root.innerHTML = `
      <style>${styles}</style>
      <div class="card">
        <header>
          <span>${seg.recording_id} &middot; ${seg.start_s.toFixed(2)}&ndash;${seg.end_s.toFixed(2)} s (${dur} s)</span>
          <span>${seg.segment_id}</span>
        </header>
        <div class="mel-wrap">
          <canvas data-mel></canvas>
          <div class="grid-overlay" data-grid></div>
        </div>
        <div class="audio-row">
          <audio controls preload="none" data-audio></audio>
          <label><input type="checkbox" data-context /> &plusmn;1 s context</label>
        </div>
        <div class="chips" data-chips></div>
        <div class="actions">
          <button class="submit" type="button" data-submit disabled>Submit</button>
          <span class="status" data-status></span>
        </div>
      </div>
    `;
    this.collectRefs();
    this.renderChips();
    this.refs.audio.src = this.client.audioUrl(this.segment.audio_url, 0);
    this.refs.contextToggle.addEventListener("change", () => this.applyContext());
    this.refs.submitButton.addEventListener("click", () => void this.submit());
    this.syncControls();
  }

  private collectRefs() {
    const q = <T extends Element>(sel: string) => {
      const el = this.root.querySelector<T>(sel);
      if (!el) throw new Error(`segment-card: missing ${sel}`);
      return el;
    };
    this.refs = {
      melCanvas: q<HTMLCanvasElement>("[data-mel]"),
      gridOverlay: q<HTMLElement>("[data-grid]"),
      audio: q<HTMLAudioElement>("[data-audio]"),
      contextToggle: q<HTMLInputElement>("[data-context]"),
      chipRow: q<HTMLElement>("[data-chips]"),
      submitButton: q<HTMLButtonElement>("[data-submit]"),
      statusLine: q<HTMLElement>("[data-status]"),
    };
  }

  private renderChips() {
    const row = this.refs.chipRow;
    row.innerHTML = "";
    this.classNames.forEach((name, i) => {
      const chip = document.createElement("button");
      chip.type = "button";
      chip.className = "chip";
      chip.dataset.class = name;
      chip.innerHTML = `<span class="key">${i + 1}</span>${name}`;
      chip.addEventListener("click", () => this.toggleClass(name));
      row.appendChild(chip);
    });
    const none = document.createElement("button");
    none.type = "button";
    none.className = "chip none";
    none.dataset.noEvents = "";
    none.innerHTML = `<span class="key">0</span>no events`;
    none.addEventListener("click", () => this.toggleNoEvents());
    row.appendChild(none);
  }

  private async loadMel() {
    try {
      const mel = await this.client.getMel(this.segment.mel_url);
      drawMel(this.refs.melCanvas, mel);
      this.refs.gridOverlay.innerHTML = "";
      for (const frac of gridLineFractions(mel.T, mel.hop_s)) {
        const tick = document.createElement("div");
        tick.className = "tick";
        tick.style.left = `${(frac * 100).toFixed(3)}%`;
        this.refs.gridOverlay.appendChild(tick);
      }
    } catch (err) {
      this.setStatus(`spectrogram unavailable: ${(err as Error).message}`, true);
    }
  }

  private applyContext() {
    const wasPlaying = !this.refs.audio.paused;
    this.refs.audio.src = this.client.audioUrl(
      this.segment.audio_url,
      this.refs.contextToggle.checked ? 1 : 0,
    );
    if (wasPlaying) void this.refs.audio.play().catch(() => undefined);
  }

  toggleClass(name: string) {
    if (!this.isOpen || !this.classNames.includes(name)) return;
    if (this.selection.classes.has(name)) {
      this.selection.classes.delete(name);
    } else {
      this.selection.classes.add(name);
      this.selection.noEvents = false;
    }
    this.syncControls();
  }

  toggleClassIndex(i: number) {
    const name = this.classNames[i];
    if (name !== undefined) this.toggleClass(name);
  }

  toggleNoEvents() {
    if (!this.isOpen) return;
    this.selection.noEvents = !this.selection.noEvents;
    if (this.selection.noEvents) this.selection.classes.clear();
    this.syncControls();
  }

  playPause() {
    const audio = this.refs.audio;
    if (audio.paused) {
      void audio.play().catch(() => undefined);
    } else {
      audio.pause();
    }
  }

  async submit() {
    if (!this.isOpen || !submittable(this.selection)) return;
    this.phase = "submitting";
    this.syncControls();
    const labels = this.selection.noEvents ? [] : [...this.selection.classes];
    try {
      const ack = await this.client.submitAnnotation(
        this.project, this.segment.segment_id, labels);
      this.phase = "locked";
      this.ackLabels = labels;
      this.syncControls();
      this.dispatchEvent(new CustomEvent("annotated", {
        bubbles: true, composed: true, detail: ack,
      }));
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else annotated this segment; the server's word stands
        this.phase = "conflict";
        this.syncControls();
        this.dispatchEvent(new CustomEvent("refresh-needed", {
          bubbles: true, composed: true,
          detail: { segment_id: this.segment.segment_id },
        }));
      } else {
        this.phase = "open";
        this.setStatus(`submit failed: ${(err as Error).message}`, true);
        this.syncControls();
      }
    }
  }

  /** Display an already-annotated card (server truth on refresh). */
  showAnnotated(labels: string[]) {
    this.phase = "locked";
    this.ackLabels = labels;
    this.syncControls();
  }

  setActive(active: boolean) {
    this.root.querySelector(".card")?.classList.toggle("active", active);
  }

  private setStatus(text: string, isError = false) {
    this.refs.statusLine.textContent = text;
    this.refs.statusLine.classList.toggle("error", isError);
  }

  private syncControls() {
    const open = this.isOpen;
    this.root.querySelector(".card")?.classList.toggle("locked", this.phase === "locked");
    for (const chip of this.refs.chipRow.querySelectorAll<HTMLButtonElement>(".chip")) {
      const name = chip.dataset.class;
      const on = name !== undefined
        ? this.selection.classes.has(name)
        : this.selection.noEvents;
      chip.classList.toggle("on", on);
      chip.disabled = !open;
    }
    this.refs.submitButton.disabled = !(open && submittable(this.selection));
    if (this.phase === "locked") {
      const labels = this.ackLabels ?? [];
      this.setStatus(labels.length ? `annotated: ${labels.join(", ")}` : "annotated: no events");
    } else if (this.phase === "submitting") {
      this.setStatus("submitting…");
    } else if (this.phase === "conflict") {
      this.setStatus("already annotated elsewhere; refreshing", true);
    }
  }
}
