"""File-backed annotation service.

One directory per project holds everything the service knows: config,
recordings, features, the segment table, an append-only annotation log,
and model checkpoints. A crashed process restarts from those files
alone; an annotation lives in the log before the caller sees the
acknowledgement, so acknowledged work survives any crash.

The engine runs the same loop the simulator runs: batches come from the
configured strategy, and a training round fires whenever the labeled
duration crosses the next budget checkpoint (or on an explicit train
request). Mutating calls conflict with a running training job instead
of interleaving with it.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import struct
import threading
import time
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import Response

import numpy as np

from .embeddings import load_embedding, save_embedding, write_manifest
from .features import (
    AudioReadError,
    compute_logmel,
    load_audio,
    load_logmel,
    save_logmel,
)
from .model import detect_events, load_model, save_model, train_ensemble
from .orchestrator import (
    PreparedCorpus,
    ProjectConfig,
    _pooled_outputs,
    build_training_examples,
    config_from_doc,
    config_to_doc,
    embed_corpus,
    evaluate_model,
    labeled_positive_fraction,
    round_seed,
    segment_corpus,
)
from .segmentation import CandidateSegment
from .selection import SelectionState, compute_predictions, select_batch
from .synth import GroundTruth, TruthEvent

log = logging.getLogger(__name__)


class Conflict(Exception):
    pass


class NotFound(Exception):
    pass


def _atomic_write_json(path: Path, payload) -> None:
    # tmp + fsync + rename: a crash leaves either the old file or the new one
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def wav_pcm16_bytes(samples: np.ndarray, sample_rate: int) -> bytes:
    """In-memory PCM16 WAV; the exact inverse of the file reader."""
    x = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate,
                                 sample_rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(data))
    return hdr + data


class ProjectEngine:
    """All state and operations for one project; the HTTP layer stays thin."""

    def __init__(self, root: Path, config: ProjectConfig,
                 synchronous_training: bool = False):
        self.root = Path(root)
        self.config = config
        self.synchronous_training = synchronous_training
        self.lock = threading.RLock()

        self.clips: dict = {}
        self.truth_events: dict = {}
        self.durations: dict = {}
        self.corpus: PreparedCorpus | None = None
        self.state: SelectionState | None = None
        self.remaining_checkpoints: list = list(config.checkpoints)
        self.rounds = 0
        self.model = None
        self.detections: dict = {}
        self.pooled = None
        self.training_status = "idle"
        self.status_history: list = ["idle"]
        self.metrics_history: list = []

    # ---- creation and recovery -------------------------------------

    @classmethod
    def create(cls, root: Path, config_doc: dict,
               synchronous_training: bool = False) -> "ProjectEngine":
        config = config_from_doc(config_doc)
        if config.label_type != "weak":
            raise ValueError("the annotation service collects weak labels only")
        root = Path(root)
        root.mkdir(parents=True, exist_ok=False)
        (root / "recordings").mkdir()
        _atomic_write_json(root / "config.json", config_to_doc(config))
        engine = cls(root, config, synchronous_training)
        engine._persist_state()
        return engine

    @classmethod
    def load(cls, root: Path,
             synchronous_training: bool = False) -> "ProjectEngine":
        root = Path(root)
        config_path = root / "config.json"
        if not config_path.exists():
            raise NotFound(f"no project at {root}")
        config = config_from_doc(json.loads(config_path.read_text()))
        engine = cls(root, config, synchronous_training)
        engine._load_recordings()
        engine._load_truth()
        if (root / "segments.json").exists():
            engine._load_prepared()
        pending = engine._restore_state()
        if pending and engine.state is not None and engine.state.annotated:
            # a queued round was lost in a crash; rerun it (same seed)
            engine._queue_training()
        return engine

    def _load_recordings(self) -> None:
        for p in sorted((self.root / "recordings").glob("*.wav")):
            self.clips[p.stem] = load_audio(p, recording_id=p.stem)
        self.durations = {rid: c.duration_s for rid, c in self.clips.items()}

    def _load_truth(self) -> None:
        path = self.root / "truth.json"
        if not path.exists():
            return
        doc = json.loads(path.read_text())
        self.truth_events = {
            rid: [TruthEvent(class_name=e["class_name"], onset_s=e["onset_s"],
                             offset_s=e["offset_s"]) for e in events]
            for rid, events in doc.items()
        }

    def _load_prepared(self) -> None:
        rows = json.loads((self.root / "segments.json").read_text())
        embeddings = {}
        for rid in self.clips:
            embeddings[rid] = load_embedding(
                self.root / "embeddings" / f"{rid}.emb", recording_id=rid)
        segments = []
        for r in rows:
            emb = embeddings[r["recording_id"]]
            segments.append(CandidateSegment(
                segment_id=r["segment_id"], recording_id=r["recording_id"],
                start_frame=r["start_frame"], end_frame=r["end_frame"],
                hop_s=emb.hop_s,
                mean_embedding=emb.values[r["start_frame"]:r["end_frame"]]
                .mean(axis=0)))
        self.corpus = PreparedCorpus(embeddings=embeddings, segments=segments,
                                     durations=dict(self.durations))

    def _restore_state(self) -> bool:
        path = self.root / "state.json"
        snapshot = json.loads(path.read_text()) if path.exists() else {}
        self.rounds = snapshot.get("rounds", 0)
        self.remaining_checkpoints = snapshot.get(
            "remaining_checkpoints", list(self.config.checkpoints))
        self.metrics_history = snapshot.get("metrics_history", [])
        self.status_history = snapshot.get("status_history", ["idle"])
        if self.status_history[-1] != "idle":
            self.status_history.append("idle")  # recovery closes the episode

        if self.corpus is not None:
            self.state = SelectionState.create(self.corpus.segments,
                                               seed=self.config.seed)
            self.state.iteration = snapshot.get("iteration", 0)
            for sid in snapshot.get("open_batch", []):
                self.state.unlabeled.discard(sid)
                self.state.selected_in_batch.append(sid)
            for sid, labels in snapshot.get("annotated", {}).items():
                self.state.unlabeled.discard(sid)
                self.state.annotated[sid] = frozenset(labels)
            self._replay_log()

        model_path = snapshot.get("model_path")
        if model_path and (self.root / model_path).exists():
            self.model = load_model(self.root / model_path)
            self._refresh_model_caches()
        return bool(snapshot.get("pending_training"))

    def _replay_log(self) -> None:
        """Apply acknowledged annotations the state snapshot missed.

        The log entry is written and synced before the acknowledgement,
        the snapshot afterwards, so a crash between the two leaves the
        entry only in the log.
        """
        path = self.root / "annotations.log"
        if not path.exists():
            return
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                sid = entry["segment_id"]
                if sid not in self.state.segments or sid in self.state.annotated:
                    continue
                if sid in self.state.selected_in_batch:
                    self.state.selected_in_batch.remove(sid)
                self.state.unlabeled.discard(sid)
                self.state.annotated[sid] = frozenset(entry["labels"])

    def _persist_state(self) -> None:
        payload = {
            "iteration": self.state.iteration if self.state else 0,
            "annotated": {sid: sorted(labels) for sid, labels in
                          (self.state.annotated if self.state else {}).items()},
            "open_batch": list(self.state.selected_in_batch) if self.state else [],
            "remaining_checkpoints": self.remaining_checkpoints,
            "rounds": self.rounds,
            "model_path": (f"models/round_{self.rounds - 1:03d}.sedm"
                           if self.rounds else None),
            "pending_training": self.training_status != "idle",
            "metrics_history": self.metrics_history,
            "status_history": self.status_history,
        }
        _atomic_write_json(self.root / "state.json", payload)

    def _append_log(self, entry: dict) -> None:
        with open(self.root / "annotations.log", "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # ---- registration and preparation ------------------------------

    def register_recording(self, recording_id: str, wav_bytes_in: bytes,
                           events=None) -> dict:
        with self.lock:
            self._require_idle()
            if self.corpus is not None:
                raise Conflict("recordings are frozen once prepared")
            if not recording_id or "/" in recording_id:
                raise ValueError("recording id must be a plain name")
            path = self.root / "recordings" / f"{recording_id}.wav"
            if path.exists():
                raise Conflict(f"recording {recording_id!r} already registered")
            path.write_bytes(wav_bytes_in)
            try:
                clip = load_audio(path, recording_id=recording_id)
            except Exception:
                path.unlink()
                raise
            self.clips[recording_id] = clip
            self.durations[recording_id] = clip.duration_s
            if events is not None:
                self.truth_events[recording_id] = [
                    TruthEvent(class_name=e["class_name"], onset_s=e["onset_s"],
                               offset_s=e["offset_s"]) for e in events]
                _atomic_write_json(self.root / "truth.json", {
                    rid: [{"class_name": e.class_name, "onset_s": e.onset_s,
                           "offset_s": e.offset_s} for e in evs]
                    for rid, evs in sorted(self.truth_events.items())})
            return {"recording_id": recording_id,
                    "duration_s": clip.duration_s}

    def prepare(self) -> int:
        with self.lock:
            self._require_idle()
            if self.corpus is not None:
                return len(self.corpus.segments)  # idempotent
            if not self.clips:
                raise ValueError("no recordings registered")

            clips = [self.clips[rid] for rid in sorted(self.clips)]
            (self.root / "features").mkdir(exist_ok=True)
            (self.root / "embeddings").mkdir(exist_ok=True)
            for clip in clips:
                save_logmel(compute_logmel(clip, self.config.feature),
                            self.root / "features" / f"{clip.recording_id}.lmel")
            embeddings = embed_corpus(clips, self.config)
            files = {}
            for rid in sorted(embeddings):
                save_embedding(embeddings[rid],
                               self.root / "embeddings" / f"{rid}.emb")
                files[rid] = f"{rid}.emb"
            write_manifest(self.root / "embeddings" / "manifest.json",
                           dim=self.config.embedding_dim, files=files)
            segments = segment_corpus(embeddings, self.config)
            _atomic_write_json(self.root / "segments.json", [
                {"segment_id": s.segment_id, "recording_id": s.recording_id,
                 "start_frame": s.start_frame, "end_frame": s.end_frame}
                for s in segments])
            self.corpus = PreparedCorpus(embeddings=embeddings,
                                         segments=segments,
                                         durations=dict(self.durations))
            self.state = SelectionState.create(segments, seed=self.config.seed)
            self._persist_state()
            return len(segments)

    # ---- the annotation loop ---------------------------------------

    def _require_prepared(self) -> None:
        if self.corpus is None or self.state is None:
            raise Conflict("project is not prepared yet")

    def _require_idle(self) -> None:
        if self.training_status != "idle":
            raise Conflict(f"training is {self.training_status}")

    def _batch_descriptor(self) -> dict:
        segments = []
        for sid in self.state.selected_in_batch:
            seg = self.state.segments[sid]
            segments.append({
                "segment_id": sid,
                "recording_id": seg.recording_id,
                "start_s": seg.start_s,
                "end_s": seg.end_s,
                "audio_url": f"/segments/{sid}/audio",
                "mel_url": f"/segments/{sid}/mel",
            })
        return {"segments": segments,
                "open": bool(segments),
                "exhausted": not self.state.unlabeled and not segments}

    def next_batch(self) -> dict:
        with self.lock:
            self._require_prepared()
            if self.state.selected_in_batch:
                return self._batch_descriptor()  # repeatable read
            self._require_idle()
            if not self.state.unlabeled:
                return {"segments": [], "open": False, "exhausted": True}

            predictions = None
            if self.config.strategy == "mfft" and self.state.annotated:
                predictions = compute_predictions(self.state, self.detections)
            quota_s = self.config.batch_fraction * self.state.total_duration_s()
            select_batch(self.config.strategy, self.state, quota_s,
                         predictions=predictions, pooled_outputs=self.pooled)
            self._persist_state()
            return self._batch_descriptor()

    def submit_annotation(self, segment_id: str, labels,
                          annotator: str = "anonymous") -> dict:
        with self.lock:
            self._require_prepared()
            self._require_idle()
            if segment_id not in self.state.segments:
                raise NotFound(f"unknown segment {segment_id!r}")
            if segment_id in self.state.annotated:
                raise Conflict(f"{segment_id} is already annotated")
            if segment_id not in self.state.selected_in_batch:
                raise Conflict(f"{segment_id} is not in the open batch")
            bad = set(labels) - set(self.config.class_names)
            if bad:
                raise ValueError(f"unknown classes {sorted(bad)}")

            entry = {"ts": time.time(), "segment_id": segment_id,
                     "labels": sorted(labels), "annotator": annotator}
            self._append_log(entry)  # the acknowledgement lives here first
            self.state.mark_annotated(segment_id, frozenset(labels))
            batch_done = not self.state.selected_in_batch
            queued = False
            if batch_done and self._consume_crossed_checkpoints():
                self._queue_training()
                queued = True
            self._persist_state()
            return {"segment_id": segment_id, "batch_done": batch_done,
                    "training_queued": queued}

    def _consume_crossed_checkpoints(self) -> bool:
        """Pop every checkpoint the labeled fraction has passed.

        Several checkpoints crossed by one batch still cost a single
        training round, same as the simulation loop.
        """
        if not self.remaining_checkpoints:
            return False
        fraction = self.state.labeled_duration_s() / self.state.total_duration_s()
        if not self.state.unlabeled:
            fraction = 1.0
        crossed = [cp for cp in self.remaining_checkpoints
                   if fraction + 1e-9 >= cp]
        if crossed:
            self.remaining_checkpoints = self.remaining_checkpoints[len(crossed):]
            return True
        return False

    def train_now(self) -> dict:
        with self.lock:
            self._require_prepared()
            self._require_idle()
            if not self.state.annotated:
                raise Conflict("nothing is annotated yet")
            self._queue_training()
            self._persist_state()
            return {"status": self.training_status, "round": self.rounds}

    def _set_status(self, status: str) -> None:
        self.training_status = status
        self.status_history.append(status)

    def _queue_training(self) -> None:
        self._set_status("queued")
        if self.synchronous_training:
            self._run_training()
        else:
            threading.Thread(target=self._run_training, daemon=True).start()

    def _run_training(self) -> None:
        with self.lock:
            self._set_status("running")
            examples = build_training_examples(self.config, self.corpus,
                                               self.state, {})
            seed = round_seed(self.config.seed, self.rounds)
            this_round = self.rounds
        # the long computation runs unlocked; mutations are fenced off
        # by the non-idle status, so the snapshot cannot go stale
        try:
            model, history = train_ensemble(examples,
                                            list(self.config.class_names),
                                            "weak", self.config.training,
                                            seed=seed)
        except Exception:
            log.exception("training round %d failed", this_round)
            with self.lock:
                self._set_status("idle")
                self._persist_state()
            return
        with self.lock:
            (self.root / "models").mkdir(exist_ok=True)
            save_model(model, self.root / f"models/round_{this_round:03d}.sedm")
            self.model = model
            self.rounds = this_round + 1
            self._refresh_model_caches()
            self._record_metrics(history)
            self._set_status("idle")
            self._persist_state()

    def _refresh_model_caches(self) -> None:
        self.detections = {
            rid: detect_events(self.model, self.corpus.embeddings[rid])
            for rid in sorted(self.corpus.embeddings)}
        if self.config.strategy == "uncertainty":
            self.pooled = _pooled_outputs(self.model, self.corpus)

    def _truth(self) -> GroundTruth | None:
        if not self.truth_events:
            return None
        return GroundTruth(events=dict(self.truth_events),
                           durations=dict(self.durations),
                           class_names=list(self.config.class_names))

    def _record_metrics(self, history) -> None:
        labeled = self.state.labeled_duration_s()
        total = self.state.total_duration_s()
        entry = {
            "round": self.rounds - 1,
            "labeled_duration_s": labeled,
            "labeled_fraction": labeled / total,
            "epochs": history.stopped_epoch + 1,
        }
        truth = self._truth()
        if truth is not None:
            # scored over the project's own pool; there is no held-out set
            report = evaluate_model(self.model, self.corpus, truth)
            entry.update({"S": report.s, "D": report.d, "I": report.i,
                          "N": report.n,
                          "ER": None if report.n == 0 else report.er})
            entry["labeled_positive_fraction"] = labeled_positive_fraction(
                self.state, truth)
        self.metrics_history.append(entry)

    # ---- read-only views -------------------------------------------

    def status(self) -> dict:
        with self.lock:
            prepared = self.corpus is not None
            out = {
                "project_id": self.root.name,
                "class_names": list(self.config.class_names),
                "strategy": self.config.strategy,
                "n_recordings": len(self.clips),
                "prepared": prepared,
                "n_segments": len(self.corpus.segments) if prepared else 0,
                "training_status": self.training_status,
                "status_history": list(self.status_history),
                "rounds": self.rounds,
                "remaining_checkpoints": list(self.remaining_checkpoints),
            }
            if prepared and self.state is not None:
                total = self.state.total_duration_s()
                labeled = self.state.labeled_duration_s()
                out.update({
                    "n_annotated": len(self.state.annotated),
                    "open_batch": list(self.state.selected_in_batch),
                    "labeled_duration_s": labeled,
                    "total_duration_s": total,
                    "labeled_fraction": labeled / total if total else 0.0,
                    "exhausted": (not self.state.unlabeled
                                  and not self.state.selected_in_batch),
                })
            return out

    def metrics(self) -> dict:
        with self.lock:
            return {"available": bool(self.truth_events),
                    "history": list(self.metrics_history)}

    def has_segment(self, segment_id: str) -> bool:
        with self.lock:
            return self.state is not None and segment_id in self.state.segments

    def segment_audio(self, segment_id: str, context_s: float = 0.0) -> bytes:
        with self.lock:
            self._require_prepared()
            if segment_id not in self.state.segments:
                raise NotFound(f"unknown segment {segment_id!r}")
            seg = self.state.segments[segment_id]
            clip = self.clips[seg.recording_id]
            rate = clip.sample_rate
            start = max(0.0, seg.start_s - context_s)
            end = min(clip.duration_s, seg.end_s + context_s)
            a = int(round(start * rate))
            b = int(round(end * rate))
            return wav_pcm16_bytes(clip.samples[a:b], rate)

    def segment_mel(self, segment_id: str) -> dict:
        with self.lock:
            self._require_prepared()
            if segment_id not in self.state.segments:
                raise NotFound(f"unknown segment {segment_id!r}")
            seg = self.state.segments[segment_id]
            spec = load_logmel(self.root / "features" / f"{seg.recording_id}.lmel",
                               recording_id=seg.recording_id)
            window = spec.values[seg.start_frame:seg.end_frame]
            return {"segment_id": segment_id, "T": int(window.shape[0]),
                    "B": int(window.shape[1]),
                    "values": [float(v) for v in window.reshape(-1)],
                    "hop_s": seg.hop_s}


class ServiceState:
    """Project registry for one storage root; engines load lazily."""

    def __init__(self, root: Path, synchronous_training: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.synchronous_training = synchronous_training
        self.engines: dict = {}
        self.lock = threading.Lock()

    def create_project(self, config_doc: dict) -> ProjectEngine:
        with self.lock:
            project_id = (f"p{len(list(self.root.iterdir())):04d}"
                          f"_{os.urandom(3).hex()}")
            engine = ProjectEngine.create(self.root / project_id, config_doc,
                                          self.synchronous_training)
            self.engines[project_id] = engine
            return engine

    def get(self, project_id: str) -> ProjectEngine:
        with self.lock:
            if project_id in self.engines:
                return self.engines[project_id]
            path = self.root / project_id
            if not (path / "config.json").exists():
                raise NotFound(f"unknown project {project_id!r}")
            engine = ProjectEngine.load(path, self.synchronous_training)
            self.engines[project_id] = engine
            return engine

    def find_segment(self, segment_id: str) -> ProjectEngine:
        with self.lock:
            known = list(self.engines.values())
        for engine in known:
            if engine.has_segment(segment_id):
                return engine
        for path in sorted(self.root.iterdir()):  # projects not loaded yet
            if path.name not in self.engines and (path / "config.json").exists():
                engine = self.get(path.name)
                if engine.has_segment(segment_id):
                    return engine
        raise NotFound(f"unknown segment {segment_id!r}")


def _http_errors(fn):
    import functools

    @functools.wraps(fn)
    async def wrapper(*args, **kwargs):
        try:
            return await fn(*args, **kwargs)
        except NotFound as err:
            raise HTTPException(status_code=404, detail=str(err))
        except Conflict as err:
            raise HTTPException(status_code=409, detail=str(err))
        except (ValueError, KeyError, TypeError, AudioReadError) as err:
            raise HTTPException(status_code=400, detail=str(err))

    return wrapper


def build_app(root: str | Path, synchronous_training: bool = False) -> FastAPI:
    state = ServiceState(Path(root), synchronous_training)
    app = FastAPI(title="sound event annotation service")
    app.state.service = state

    @app.post("/projects", status_code=201)
    @_http_errors
    async def create_project(request: Request):
        doc = await request.json()
        if not isinstance(doc, dict):
            raise ValueError("config document must be a JSON object")
        engine = state.create_project(doc)
        return {"project_id": engine.root.name}

    @app.post("/projects/{project_id}/recordings", status_code=201)
    @_http_errors
    async def add_recording(project_id: str, request: Request):
        body = await request.json()
        wav = base64.b64decode(body["audio_b64"])
        return state.get(project_id).register_recording(
            body["recording_id"], wav, events=body.get("events"))

    @app.post("/projects/{project_id}/prepare")
    @_http_errors
    async def prepare(project_id: str):
        return {"n_segments": state.get(project_id).prepare()}

    @app.get("/projects/{project_id}/batch")
    @_http_errors
    async def batch(project_id: str):
        return state.get(project_id).next_batch()

    @app.post("/projects/{project_id}/annotations")
    @_http_errors
    async def annotate(project_id: str, request: Request):
        body = await request.json()
        return state.get(project_id).submit_annotation(
            body["segment_id"], body.get("labels", []),
            annotator=body.get("annotator", "anonymous"))

    @app.post("/projects/{project_id}/train", status_code=202)
    @_http_errors
    async def train_project(project_id: str):
        return state.get(project_id).train_now()

    @app.get("/projects/{project_id}/status")
    @_http_errors
    async def project_status(project_id: str):
        return state.get(project_id).status()

    @app.get("/projects/{project_id}/metrics")
    @_http_errors
    async def project_metrics(project_id: str):
        return state.get(project_id).metrics()

    @app.get("/segments/{segment_id:path}/audio")
    @_http_errors
    async def segment_audio(segment_id: str, context: float = 0.0):
        engine = state.find_segment(segment_id)
        return Response(content=engine.segment_audio(segment_id, context),
                        media_type="audio/wav")

    @app.get("/segments/{segment_id:path}/mel")
    @_http_errors
    async def segment_mel(segment_id: str):
        return state.find_segment(segment_id).segment_mel(segment_id)

    return app
