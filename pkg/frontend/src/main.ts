import { AnnotationApp } from "./app.js";
import { BatchQueue } from "./batch.js";
import { SegmentCard } from "./card.js";
import { ProgressDashboard } from "./dashboard.js";

export function defineElements(): void {
  if (!customElements.get("segment-card")) {
    customElements.define("segment-card", SegmentCard);
    customElements.define("batch-queue", BatchQueue);
    customElements.define("progress-dashboard", ProgressDashboard);
    customElements.define("annotation-app", AnnotationApp);
  }
}

defineElements();

if (typeof document !== "undefined" && document.getElementById("root")) {
  document.getElementById("root")!.appendChild(new AnnotationApp());
}
