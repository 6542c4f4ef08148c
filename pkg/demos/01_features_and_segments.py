#!/usr/bin/env python3
"""Features to candidate segments, end to end on synthetic audio.

Renders a few recordings with known events, computes log-mel features
and random-projection embeddings, then cuts each recording at change
points. Run it and compare the printed boundaries with the truth.
"""
import dataclasses

from sedal.embeddings import RandomProjectionProvider, embed
from sedal.features import compute_logmel
from sedal.segmentation import segment_recording
from sedal.synth import generate, rare_preset

spec = dataclasses.replace(rare_preset(n_recordings=3, seed=4),
                           recording_len_s=12.0, events_per_minute=12.0)
clips, truth = generate(spec)
print(f"{len(clips)} recordings, classes: {', '.join(truth.class_names)}")

specs = [compute_logmel(clip) for clip in clips]
one = specs[0]
print(f"log-mel: {one.values.shape[0]} frames x {one.values.shape[1]} bands, "
      f"hop {one.hop_s*1000:.0f} ms")

provider = RandomProjectionProvider(seed=12, dim=32, context=2)
provider.fit(specs)
embeddings = [embed(s, provider) for s in specs]
print(f"embedding: {embeddings[0].dim} dims per frame\n")

for emb in embeddings:
    segments = segment_recording(emb, mode="variable")
    events = truth.events[emb.recording_id]
    print(f"{emb.recording_id}: {len(segments)} segments")
    print("  boundaries at " +
          ", ".join(f"{s.start_s:.2f}" for s in segments[1:]) + " s")
    print("  events at     " +
          ", ".join(f"{e.onset_s:.2f}-{e.offset_s:.2f} ({e.class_name})"
                    for e in events))
