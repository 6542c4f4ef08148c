#!/usr/bin/env python3
"""The annotation loop over HTTP, start to finish.

Drives the service with an in-process client: create a project, upload
recordings, pull batches, answer with ground-truth labels, and watch
training rounds fire as budget checkpoints are crossed. The same
endpoints serve a real deployment via `python3 -m sedal.cli serve`.
"""
import base64
import dataclasses
import pathlib
import tempfile
from types import SimpleNamespace

from fastapi.testclient import TestClient

from sedal.features import write_wav_pcm16
from sedal.service import build_app
from sedal.synth import generate, rare_preset, simulate_annotation

spec = dataclasses.replace(rare_preset(n_recordings=12, seed=9),
                           recording_len_s=20.0, events_per_minute=8.0,
                           ebr_db=(6.0, 12.0))
clips, truth = generate(spec)

store = pathlib.Path(tempfile.mkdtemp(prefix="sedal_demo_"))
client = TestClient(build_app(store, synchronous_training=True))
print(f"service storage in {store}")

r = client.post("/projects", json={
    "class_names": list(truth.class_names),
    "seed": 2,
    "strategy": "mfft",
    "checkpoints": [0.5, 1.0],
    "batch_fraction": 0.2,
    "embedding_dim": 32,
    "training": {"n_hidden": 32, "context": 1, "max_epochs": 200},
})
pid = r.json()["project_id"]
print(f"project {pid}")

for clip in clips:
    wav = store / "upload.wav"
    write_wav_pcm16(wav, clip.samples, clip.sample_rate)
    client.post(f"/projects/{pid}/recordings", json={
        "recording_id": clip.recording_id,
        "audio_b64": base64.b64encode(wav.read_bytes()).decode(),
        "events": [{"class_name": e.class_name, "onset_s": e.onset_s,
                    "offset_s": e.offset_s}
                   for e in truth.events[clip.recording_id]],
    })
n = client.post(f"/projects/{pid}/prepare").json()["n_segments"]
print(f"{len(clips)} recordings uploaded, {n} candidate segments\n")

batch_no = 0
while True:
    batch = client.get(f"/projects/{pid}/batch").json()
    if not batch["segments"]:
        break
    for seg in batch["segments"]:
        labels = sorted(simulate_annotation(
            SimpleNamespace(recording_id=seg["recording_id"],
                            start_s=seg["start_s"], end_s=seg["end_s"]),
            truth, mode="weak"))
        r = client.post(f"/projects/{pid}/annotations",
                        json={"segment_id": seg["segment_id"],
                              "labels": labels})
        if r.json()["training_queued"]:
            status = client.get(f"/projects/{pid}/status").json()
            print(f"  -> batch {batch_no} crossed a checkpoint, "
                  f"trained round {status['rounds'] - 1}")
    batch_no += 1

status = client.get(f"/projects/{pid}/status").json()
metrics = client.get(f"/projects/{pid}/metrics").json()
print(f"\nannotated all {status['n_annotated']} segments "
      f"in {batch_no} batches, {status['rounds']} training rounds")
for entry in metrics["history"]:
    print(f"  round {entry['round']}: {100 * entry['labeled_fraction']:.0f}% "
          f"budget, error rate {entry['ER']:.2f} on the project's own audio")
