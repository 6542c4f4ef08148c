import type { ServiceClient } from "./api.js";
import { buildErChart } from "./chart.js";
import type { MetricsDTO, ProjectStatusDTO } from "./types.js";

type Refs = {
  gaugeFill: HTMLElement;
  gaugeText: HTMLElement;
  trainingLine: HTMLElement;
  historyLine: HTMLElement;
  chartSlot: HTMLElement;
};

const styles = `
  :host { display: block; }
  .panel {
    display: grid; gap: 12px; padding: 12px;
    background: #161a22; border: 1px solid #2c3240; border-radius: 8px;
  }
  h2 { margin: 0; font: 600 13px/1 system-ui, sans-serif; color: #c8d0dd; text-transform: uppercase; letter-spacing: 0.06em; }
  .gauge { display: grid; gap: 4px; }
  .gauge-track { height: 10px; background: #242a36; border-radius: 5px; overflow: hidden; }
  .gauge-fill { height: 100%; background: linear-gradient(90deg, #2f5fb3, #5b8def); width: 0%; transition: width 0.3s; }
  .gauge-text, .training, .history { font: 12px/1.5 system-ui, sans-serif; color: #9aa4b5; }
  .training b { color: #e4e9f1; }
  .training.running b { color: #5b8def; }
  .chart-slot svg { width: 100%; height: auto; display: block; }
  .chart-slot .chart-bg { fill: #11141b; }
  .chart-slot .chart-grid { stroke: #2c3240; stroke-width: 1; }
  .chart-slot .chart-tick { fill: #697183; font: 9px ui-monospace, monospace; }
  .chart-slot .chart-line { stroke: #5b8def; stroke-width: 1.5; }
  .chart-slot .chart-dot { fill: #e4e9f1; stroke: #2f5fb3; stroke-width: 1.5; }
  .chart-empty { font: 12px/1.5 system-ui, sans-serif; color: #697183; }
`;

const POLL_MS = 1000;

/**
 * Budget gauge, training state, and the error-rate curve.
 *
 * Metrics exist only for projects seeded with reference events; without
 * them the gauge still works and the chart slot says why it is empty.
 * Training state is polled, never pushed, and polling stops by itself
 * once the service goes idle again.
 */
export class ProgressDashboard extends HTMLElement {
  client!: ServiceClient;
  project!: string;

  private root!: ShadowRoot;
  private refs!: Refs;
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  connectedCallback() {
    this.root = this.shadowRoot ?? this.attachShadow({ mode: "open" });
    this.root.innerHTML = `
      <style>${styles}</style>
      <div class="panel">
        <h2>Progress</h2>
        <div class="gauge">
          <div class="gauge-track"><div class="gauge-fill" data-gauge-fill></div></div>
          <div class="gauge-text" data-gauge-text>no labels yet</div>
        </div>
        <div class="training" data-training></div>
        <div class="history" data-history></div>
        <div class="chart-slot" data-chart></div>
      </div>
    `;
    this.refs = {
      gaugeFill: this.root.querySelector<HTMLElement>("[data-gauge-fill]")!,
      gaugeText: this.root.querySelector<HTMLElement>("[data-gauge-text]")!,
      trainingLine: this.root.querySelector<HTMLElement>("[data-training]")!,
      historyLine: this.root.querySelector<HTMLElement>("[data-history]")!,
      chartSlot: this.root.querySelector<HTMLElement>("[data-chart]")!,
    };
    void this.refresh();
  }

  disconnectedCallback() {
    this.stopPolling();
  }

  async refresh(): Promise<ProjectStatusDTO | null> {
    let status: ProjectStatusDTO;
    let metrics: MetricsDTO;
    try {
      [status, metrics] = await Promise.all([
        this.client.getStatus(this.project),
        this.client.getMetrics(this.project),
      ]);
    } catch (err) {
      this.refs.trainingLine.textContent = `status unavailable: ${(err as Error).message}`;
      return null;
    }
    this.renderGauge(status);
    this.renderTraining(status);
    this.renderChart(metrics);
    return status;
  }

  /** Poll training state after a batch completes; stops when idle. */
  startPolling() {
    if (this.pollTimer !== null) return;
    this.pollTimer = setInterval(() => {
      void this.refresh().then((status) => {
        if (status && status.training_status === "idle") this.stopPolling();
      });
    }, POLL_MS);
  }

  stopPolling() {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  private renderGauge(status: ProjectStatusDTO) {
    const labeled = status.labeled_duration_s ?? 0;
    const total = status.total_duration_s ?? 0;
    const fraction = total > 0 ? labeled / total : 0;
    this.refs.gaugeFill.style.width = `${(fraction * 100).toFixed(2)}%`;
    this.refs.gaugeText.textContent = total > 0
      ? `${labeled.toFixed(1)} s of ${total.toFixed(1)} s labeled (${(fraction * 100).toFixed(1)}%)`
      : "no labels yet";
    this.dataset.budgetFraction = String(fraction);
    this.dataset.labeledS = String(labeled);
  }

  private renderTraining(status: ProjectStatusDTO) {
    const st = status.training_status;
    this.refs.trainingLine.innerHTML =
      `training: <b>${st}</b> &middot; rounds: <b>${status.rounds}</b>`;
    this.refs.trainingLine.classList.toggle("running", st === "running" || st === "queued");
    const tail = status.status_history.slice(-6);
    this.refs.historyLine.textContent = tail.length > 1 ? tail.join(" → ") : "";
  }

  private renderChart(metrics: MetricsDTO) {
    const slot = this.refs.chartSlot;
    slot.innerHTML = "";
    if (!metrics.available) {
      const note = document.createElement("p");
      note.className = "chart-empty";
      note.textContent = "no reference events in this project, so no error-rate curve";
      slot.appendChild(note);
      return;
    }
    if (metrics.history.length === 0) {
      const note = document.createElement("p");
      note.className = "chart-empty";
      note.textContent = "error-rate curve appears after the first training round";
      slot.appendChild(note);
      return;
    }
    slot.appendChild(buildErChart(metrics.history));
  }
}
