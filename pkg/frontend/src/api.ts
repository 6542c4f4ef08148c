import type {
  AnnotationAckDTO,
  BatchDTO,
  MelDTO,
  MetricsDTO,
  ProjectStatusDTO,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.status = status;
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  let res: Response;
  try {
    res = await fetch(base + path, init);
  } catch (err) {
    throw new ApiError(0, `service unreachable: ${String(err)}`);
  }
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = (await res.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

/**
 * Typed client for one service origin. Paths mirror the server routes;
 * nothing here caches, so every call reflects server truth.
 */
export class ServiceClient {
  readonly base: string;

  constructor(base: string = "") {
    this.base = base.replace(/\/+$/, "");
  }

  getStatus(project: string): Promise<ProjectStatusDTO> {
    return request(this.base, `/projects/${encodeURIComponent(project)}/status`);
  }

  getBatch(project: string): Promise<BatchDTO> {
    return request(this.base, `/projects/${encodeURIComponent(project)}/batch`);
  }

  getMetrics(project: string): Promise<MetricsDTO> {
    return request(this.base, `/projects/${encodeURIComponent(project)}/metrics`);
  }

  submitAnnotation(
    project: string,
    segmentId: string,
    labels: string[],
    annotator = "browser",
  ): Promise<AnnotationAckDTO> {
    return request(this.base, `/projects/${encodeURIComponent(project)}/annotations`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ segment_id: segmentId, labels, annotator }),
    });
  }

  startTraining(project: string): Promise<{ status: string; round: number }> {
    return request(this.base, `/projects/${encodeURIComponent(project)}/train`, {
      method: "POST",
    });
  }

  getMel(melUrl: string): Promise<MelDTO> {
    return request(this.base, melUrl);
  }

  /** Audio URL for an <audio> element; context widens the clip on both sides. */
  audioUrl(audioUrl: string, contextS = 0): string {
    const suffix = contextS > 0 ? `?context=${contextS}` : "";
    return this.base + audioUrl + suffix;
  }
}
