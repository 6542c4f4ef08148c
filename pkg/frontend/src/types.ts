/** Wire types for the annotation service. */

export type SegmentCardDTO = {
  segment_id: string;
  recording_id: string;
  start_s: number;
  end_s: number;
  audio_url: string;
  mel_url: string;
};

export type BatchDTO = {
  segments: SegmentCardDTO[];
  open: boolean;
  exhausted: boolean;
};

export type ProjectStatusDTO = {
  project_id: string;
  class_names: string[];
  strategy: string;
  n_recordings: number;
  prepared: boolean;
  n_segments: number;
  training_status: "idle" | "queued" | "running" | string;
  status_history: string[];
  rounds: number;
  remaining_checkpoints: number[];
  n_annotated?: number;
  open_batch?: string[];
  labeled_duration_s?: number;
  total_duration_s?: number;
  labeled_fraction?: number;
  exhausted?: boolean;
};

export type MetricsEntryDTO = {
  round: number;
  labeled_duration_s: number;
  labeled_fraction: number;
  epochs: number;
  S?: number;
  D?: number;
  I?: number;
  N?: number;
  ER?: number | null;
  labeled_positive_fraction?: number;
};

export type MetricsDTO = {
  available: boolean;
  history: MetricsEntryDTO[];
};

export type AnnotationAckDTO = {
  segment_id: string;
  batch_done: boolean;
  training_queued: boolean;
};

export type MelDTO = {
  segment_id: string;
  T: number;
  B: number;
  values: number[]; // row-major, T rows of B mel bins
  hop_s: number;
};

/** What the annotator has toggled on one card before submitting. */
export type LabelSelection = {
  classes: Set<string>;
  noEvents: boolean;
};

export function submittable(sel: LabelSelection): boolean {
  return sel.noEvents || sel.classes.size > 0;
}
