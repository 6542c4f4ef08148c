import { ServiceClient } from "./api.js";
import { BatchQueue } from "./batch.js";
import { ProgressDashboard } from "./dashboard.js";

const styles = `
  :host {
    display: block; min-height: 100vh;
    background: #0e1117; color: #c8d0dd;
    font: 14px/1.5 system-ui, sans-serif;
  }
  .shell { max-width: 980px; margin: 0 auto; padding: 20px 16px 60px; display: grid; gap: 16px; }
  header.top { display: flex; align-items: baseline; gap: 12px; }
  header.top h1 { margin: 0; font-size: 18px; color: #e4e9f1; }
  header.top .project-tag { font: 12px ui-monospace, monospace; color: #9aa4b5; }
  header.top button {
    margin-left: auto; background: none; border: 1px solid #3a4152;
    color: #9aa4b5; border-radius: 6px; padding: 4px 10px; font-size: 12px; cursor: pointer;
  }
  .layout { display: grid; gap: 16px; grid-template-columns: 1fr; }
  @media (min-width: 860px) { .layout { grid-template-columns: minmax(0, 1fr) 320px; align-items: start; } }
  .opener {
    display: grid; gap: 12px; max-width: 420px; margin: 12vh auto 0;
    padding: 24px; background: #161a22; border: 1px solid #2c3240; border-radius: 10px;
  }
  .opener h1 { margin: 0; font-size: 18px; color: #e4e9f1; }
  .opener p { margin: 0; font-size: 13px; color: #9aa4b5; }
  .opener form { display: flex; gap: 8px; }
  .opener input {
    flex: 1; background: #0e1117; color: #e4e9f1;
    border: 1px solid #3a4152; border-radius: 6px; padding: 8px 10px;
    font: 13px ui-monospace, monospace;
  }
  .opener button {
    background: #2f5fb3; color: #fff; border: 0; border-radius: 6px;
    padding: 8px 16px; font-size: 13px; cursor: pointer;
  }
  .opener .error { color: #e07a6a; font-size: 13px; }
`;

const STORAGE_KEY = "annotation-ui.project";

/**
 * Top-level shell: opens a project by id, then hosts the batch queue
 * and the progress dashboard side by side. The service has no project
 * listing endpoint, so the id is typed once and remembered locally.
 */
export class AnnotationApp extends HTMLElement {
  private root!: ShadowRoot;
  private client!: ServiceClient;
  private project: string | null = null;

  connectedCallback() {
    this.root = this.shadowRoot ?? this.attachShadow({ mode: "open" });
    this.client = new ServiceClient(this.getAttribute("server") ?? "");
    this.project = this.getAttribute("project") ?? this.storedProject();
    this.render();
  }

  private storedProject(): string | null {
    try {
      return localStorage.getItem(STORAGE_KEY);
    } catch {
      return null;
    }
  }

  private rememberProject(id: string | null) {
    try {
      if (id === null) localStorage.removeItem(STORAGE_KEY);
      else localStorage.setItem(STORAGE_KEY, id);
    } catch {
      // private mode; nothing to remember into
    }
  }

  private render() {
    if (this.project === null) {
      this.renderOpener();
    } else {
      void this.renderWorkspace(this.project);
    }
  }

  private renderOpener(errorText = "") {
    this.root.innerHTML = `
      <style>${styles}</style>
      <div class="opener">
        <h1>Sound event annotation</h1>
        <p>Enter the id of a project on this annotation service.</p>
        <form data-open-form>
          <input name="project" placeholder="p0000_ab12cd" autocomplete="off" required />
          <button type="submit">Open</button>
        </form>
        ${errorText ? `<p class="error">${errorText}</p>` : ""}
      </div>
    `;
    const form = this.root.querySelector<HTMLFormElement>("[data-open-form]")!;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const input = form.querySelector<HTMLInputElement>("input[name=project]")!;
      const id = input.value.trim();
      if (id) void this.open(id);
    });
  }

  async open(id: string) {
    try {
      const status = await this.client.getStatus(id);
      if (!status.prepared) {
        this.renderOpener(`project ${id} exists but is not prepared yet`);
        return;
      }
    } catch (err) {
      this.renderOpener(`cannot open ${id}: ${(err as Error).message}`);
      return;
    }
    this.project = id;
    this.rememberProject(id);
    void this.renderWorkspace(id);
  }

  private async renderWorkspace(project: string) {
    let classNames: string[];
    try {
      const status = await this.client.getStatus(project);
      classNames = status.class_names;
    } catch (err) {
      this.project = null;
      this.rememberProject(null);
      this.renderOpener(`cannot open ${project}: ${(err as Error).message}`);
      return;
    }

    this.root.innerHTML = `
      <style>${styles}</style>
      <div class="shell">
        <header class="top">
          <h1>Sound event annotation</h1>
          <span class="project-tag">${project}</span>
          <button type="button" data-switch>switch project</button>
        </header>
        <div class="layout">
          <div data-queue-slot></div>
          <div data-dash-slot></div>
        </div>
      </div>
    `;
    this.root.querySelector("[data-switch]")!.addEventListener("click", () => {
      this.project = null;
      this.rememberProject(null);
      this.render();
    });

    const queue = new BatchQueue();
    queue.client = this.client;
    queue.project = project;
    queue.classNames = classNames;
    this.root.querySelector("[data-queue-slot]")!.appendChild(queue);

    const dash = new ProgressDashboard();
    dash.client = this.client;
    dash.project = project;
    this.root.querySelector("[data-dash-slot]")!.appendChild(dash);

    queue.addEventListener("annotated", () => void dash.refresh());
    queue.addEventListener("batch-complete", () => dash.startPolling());
  }

  get queue(): BatchQueue | null {
    return this.root?.querySelector("batch-queue") ?? null;
  }

  get dashboard(): ProgressDashboard | null {
    return this.root?.querySelector("progress-dashboard") ?? null;
  }
}
