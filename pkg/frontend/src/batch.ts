import type { ServiceClient } from "./api.js";
import { SegmentCard } from "./card.js";
import type { AnnotationAckDTO, BatchDTO, ProjectStatusDTO } from "./types.js";

type Refs = {
  progress: HTMLElement;
  list: HTMLElement;
  emptyState: HTMLElement;
};

const styles = `
  :host { display: block; }
  .queue { display: grid; gap: 12px; }
  .progress {
    display: flex; gap: 16px; flex-wrap: wrap;
    font: 13px/1.4 system-ui, sans-serif; color: #9aa4b5;
    padding: 8px 12px; background: #161a22; border-radius: 8px;
    border: 1px solid #2c3240;
  }
  .progress b { color: #e4e9f1; font-weight: 600; }
  .list { display: grid; gap: 10px; }
  .empty {
    padding: 28px; text-align: center;
    font: 14px/1.5 system-ui, sans-serif; color: #9aa4b5;
    background: #161a22; border: 1px dashed #3a4152; border-radius: 8px;
  }
  .empty.exhausted { color: #d9b96a; border-color: #6b5a2f; }
  .hint { font: 12px/1.5 system-ui, sans-serif; color: #697183; }
  kbd {
    background: #242a36; border-radius: 3px; padding: 1px 5px;
    font: 11px ui-monospace, monospace; border: 1px solid #3a4152;
  }
`;

/**
 * The open annotation batch, in server order.
 *
 * Every acknowledged annotation triggers a re-fetch, so the queue never
 * drifts from the server: cards the server still offers stay editable,
 * cards it no longer offers lock. Keyboard handling lives here because
 * the active-card cursor does.
 */
export class BatchQueue extends HTMLElement {
  client!: ServiceClient;
  project!: string;
  classNames!: string[];

  private root!: ShadowRoot;
  private refs!: Refs;
  private cards = new Map<string, SegmentCard>();
  private order: string[] = [];
  private activeId: string | null = null;
  private lastStatus: ProjectStatusDTO | null = null;
  private readonly onKeyDown = (ev: KeyboardEvent) => this.handleKey(ev);

  connectedCallback() {
    this.root = this.shadowRoot ?? this.attachShadow({ mode: "open" });
    this.root.innerHTML = `
      <style>${styles}</style>
      <div class="queue">
        <div class="progress" data-progress></div>
        <div class="list" data-list></div>
        <div class="empty" data-empty hidden></div>
        <p class="hint">
          <kbd>1</kbd>&ndash;<kbd>9</kbd> toggle classes &middot; <kbd>0</kbd> no events
          &middot; <kbd>space</kbd> play &middot; <kbd>enter</kbd> submit
          &middot; <kbd>j</kbd>/<kbd>k</kbd> move
        </p>
      </div>
    `;
    this.refs = {
      progress: this.root.querySelector<HTMLElement>("[data-progress]")!,
      list: this.root.querySelector<HTMLElement>("[data-list]")!,
      emptyState: this.root.querySelector<HTMLElement>("[data-empty]")!,
    };
    this.addEventListener("annotated", ((ev: Event) => {
      void this.onAnnotated((ev as CustomEvent<AnnotationAckDTO>).detail);
    }) as EventListener);
    this.addEventListener("refresh-needed", (() => void this.refresh()) as EventListener);
    window.addEventListener("keydown", this.onKeyDown);
    void this.refresh();
  }

  disconnectedCallback() {
    window.removeEventListener("keydown", this.onKeyDown);
  }

  get activeCard(): SegmentCard | null {
    return this.activeId ? this.cards.get(this.activeId) ?? null : null;
  }

  /** Pull batch and status; reconcile cards against the server's list. */
  async refresh(): Promise<void> {
    let batch: BatchDTO;
    try {
      [batch, this.lastStatus] = await Promise.all([
        this.client.getBatch(this.project),
        this.client.getStatus(this.project),
      ]);
    } catch (err) {
      this.refs.emptyState.hidden = false;
      this.refs.emptyState.classList.remove("exhausted");
      this.refs.emptyState.textContent = `batch unavailable: ${(err as Error).message}`;
      return;
    }

    const serverIds = new Set(batch.segments.map((s) => s.segment_id));
    for (const seg of batch.segments) {
      if (!this.cards.has(seg.segment_id)) {
        const card = new SegmentCard();
        card.segment = seg;
        card.classNames = this.classNames;
        card.client = this.client;
        card.project = this.project;
        this.cards.set(seg.segment_id, card);
        this.order.push(seg.segment_id);
        this.refs.list.appendChild(card);
      }
    }
    for (const [sid, card] of this.cards) {
      // gone from the open batch without our own ack: somebody else
      // annotated it; lock without inventing labels
      if (!serverIds.has(sid) && card.isOpen) card.showAnnotated([]);
    }

    if (this.order.length === 0) {
      this.refs.emptyState.hidden = false;
      this.refs.emptyState.classList.toggle("exhausted", batch.exhausted);
      this.refs.emptyState.textContent = batch.exhausted
        ? "pool exhausted: every segment has been annotated"
        : "no open batch";
    } else {
      this.refs.emptyState.hidden = true;
    }

    if (this.activeCard === null || !this.activeCard.isOpen) {
      this.activeId = this.order.find((sid) => this.cards.get(sid)?.isOpen) ?? null;
    }
    this.syncActive();
    this.renderProgress(batch);
  }

  private renderProgress(batch: BatchDTO) {
    const total = this.order.length;
    const open = batch.segments.length;
    const parts = [`batch: <b>${total - open}/${total}</b> annotated`];
    const st = this.lastStatus;
    if (st && st.labeled_duration_s !== undefined && st.labeled_fraction !== undefined) {
      parts.push(`labeled: <b>${st.labeled_duration_s.toFixed(1)} s</b>`);
      parts.push(`budget: <b>${(st.labeled_fraction * 100).toFixed(1)}%</b>`);
    }
    this.refs.progress.innerHTML = parts.map((p) => `<span>${p}</span>`).join("");
    this.refs.progress.dataset.openCount = String(open);
    this.refs.progress.dataset.totalCount = String(total);
  }

  private async onAnnotated(ack: AnnotationAckDTO) {
    await this.refresh();
    if (ack.batch_done) {
      this.dispatchEvent(new CustomEvent("batch-complete", {
        bubbles: true, composed: true, detail: ack,
      }));
    }
  }

  private moveActive(step: number) {
    const openIds = this.order.filter((sid) => this.cards.get(sid)?.isOpen);
    if (openIds.length === 0) return;
    const pos = this.activeId ? openIds.indexOf(this.activeId) : -1;
    const next = pos === -1
      ? 0
      : Math.min(Math.max(pos + step, 0), openIds.length - 1);
    this.activeId = openIds[next] ?? null;
    this.syncActive();
  }

  private syncActive() {
    for (const [sid, card] of this.cards) card.setActive(sid === this.activeId);
    this.activeCard?.scrollIntoView?.({ block: "nearest", behavior: "smooth" });
  }

  private handleKey(ev: KeyboardEvent) {
    const target = ev.composedPath()[0] as HTMLElement | undefined;
    const tag = target?.tagName;
    if (tag === "INPUT" || tag === "TEXTAREA" || tag === "SELECT" || tag === "AUDIO") {
      return;
    }
    const card = this.activeCard;
    if (ev.key >= "1" && ev.key <= "9") {
      card?.toggleClassIndex(Number(ev.key) - 1);
      ev.preventDefault();
    } else if (ev.key === "0") {
      card?.toggleNoEvents();
      ev.preventDefault();
    } else if (ev.key === " ") {
      card?.playPause();
      ev.preventDefault();
    } else if (ev.key === "Enter") {
      void card?.submit();
      ev.preventDefault();
    } else if (ev.key === "j" || ev.key === "ArrowDown") {
      this.moveActive(1);
      ev.preventDefault();
    } else if (ev.key === "k" || ev.key === "ArrowUp") {
      this.moveActive(-1);
      ev.preventDefault();
    }
  }
}
