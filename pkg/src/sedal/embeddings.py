"""Frame embedding providers.

Embeddings are the representation all later stages work on: change
likelihoods, segment mean vectors, and the detector input. Three
providers are available: identity passthrough of log-mel features,
a seeded random projection of context-stacked frames, and verbatim
load of externally computed embeddings.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import LogMelSpectrogram


@dataclass
class EmbeddingSequence:
    """T x D matrix of per-frame embeddings, timing inherited from features."""

    values: np.ndarray
    recording_id: str
    hop_s: float = 0.02

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def stack_context(values: np.ndarray, c: int) -> np.ndarray:
    """Concatenate each frame with its c neighbors on both sides.

    Row t of the result is the horizontal concatenation of rows
    t-c .. t+c of the input, offsets clamped to [0, T). Output is
    T x (2c+1)*D.
    """
    if c == 0:
        return np.asarray(values, dtype=np.float64)
    t = np.arange(values.shape[0])
    cols = [values[np.clip(t + o, 0, values.shape[0] - 1)] for o in range(-c, c + 1)]
    return np.concatenate(cols, axis=1)


def stack_context_rows(values: np.ndarray, rows: np.ndarray, c: int) -> np.ndarray:
    """stack_context restricted to the given row indices (same clamping)."""
    if c == 0:
        return np.asarray(values[rows], dtype=np.float64)
    cols = [values[np.clip(rows + o, 0, values.shape[0] - 1)] for o in range(-c, c + 1)]
    return np.concatenate(cols, axis=1)


class PassthroughProvider:
    """Identity provider: embeddings are the log-mel features themselves."""

    kind = "logmel-passthrough"

    def embed(self, spec: LogMelSpectrogram) -> EmbeddingSequence:
        return EmbeddingSequence(values=np.asarray(spec.values, dtype=np.float64),
                                 recording_id=spec.recording_id,
                                 hop_s=spec.hop_s)


class RandomProjectionProvider:
    """Context-stacked frames through a fixed seeded projection.

    fit() draws the projection matrix and freezes per-dimension
    standardization statistics over the supplied corpus; embed() then
    applies the same map to any recording. Statistics are fitted once
    and never updated, so pairwise distances stay stable over a run.
    """

    kind = "random-projection"

    def __init__(self, seed: int, dim: int = 256, context: int = 2):
        self.seed = seed
        self.dim = dim
        self.context = context
        self.projection: np.ndarray | None = None
        self.mean: np.ndarray | None = None
        self.scale: np.ndarray | None = None

    def fit(self, specs: list[LogMelSpectrogram]) -> None:
        if not specs:
            raise ValueError("cannot fit on an empty corpus")
        specs = sorted(specs, key=lambda s: s.recording_id)  # order-proof statistics
        n_bands = specs[0].values.shape[1]
        in_dim = (2 * self.context + 1) * n_bands
        rng = np.random.default_rng(self.seed)
        self.projection = rng.standard_normal((in_dim, self.dim)) / np.sqrt(in_dim)
        projected = [stack_context(s.values, self.context) @ self.projection for s in specs]
        stacked = np.concatenate(projected, axis=0)
        self.mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        self.scale = np.where(std < 1e-12, 1.0, std)

    def embed(self, spec: LogMelSpectrogram) -> EmbeddingSequence:
        if self.projection is None:
            raise RuntimeError("provider not fitted")
        x = stack_context(spec.values, self.context) @ self.projection
        x = (x - self.mean) / self.scale
        return EmbeddingSequence(values=x, recording_id=spec.recording_id, hop_s=spec.hop_s)


class PrecomputedProvider:
    """Load embeddings computed elsewhere, via a manifest document."""

    kind = "precomputed-file"

    def __init__(self, manifest_path: str | Path):
        self.manifest_path = Path(manifest_path)
        doc = json.loads(self.manifest_path.read_text())
        self.dim = int(doc["dim"])
        self.files = {str(k): Path(v) for k, v in doc["files"].items()}

    def embed(self, spec: LogMelSpectrogram) -> EmbeddingSequence:
        path = self.files.get(spec.recording_id)
        if path is None:
            raise KeyError(f"no embedding file for recording {spec.recording_id!r}")
        if not path.is_absolute():
            path = self.manifest_path.parent / path
        seq = load_embedding(path, spec.recording_id, hop_s=spec.hop_s)
        if seq.dim != self.dim:
            raise ValueError(
                f"{path}: dimension {seq.dim} does not match manifest dim {self.dim}"
            )
        if seq.n_frames != spec.n_frames:
            raise ValueError(
                f"{path}: {seq.n_frames} frames, expected {spec.n_frames}"
            )
        if not np.all(np.isfinite(seq.values)):
            raise ValueError(f"{path}: non-finite values")
        return seq


def embed(spec: LogMelSpectrogram, provider) -> EmbeddingSequence:
    return provider.embed(spec)


EMB_MAGIC = b"EMB1"


def save_embedding(seq: EmbeddingSequence, path: str | Path) -> None:
    """File format: magic 'EMB1', u32 T, u32 D, T*D float32 row-major, LE."""
    t, d = seq.values.shape
    payload = EMB_MAGIC + struct.pack("<II", t, d)
    payload += seq.values.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(payload)


def load_embedding(path: str | Path, recording_id: str, hop_s: float = 0.02) -> EmbeddingSequence:
    raw = Path(path).read_bytes()
    if raw[:4] != EMB_MAGIC:
        raise ValueError(f"{path}: bad magic")
    t, d = struct.unpack("<II", raw[4:12])
    values = np.frombuffer(raw[12:], dtype="<f4").reshape(t, d).astype(np.float64)
    return EmbeddingSequence(values=values, recording_id=recording_id, hop_s=hop_s)


def write_manifest(path: str | Path, dim: int, files: dict[str, str]) -> None:
    Path(path).write_text(json.dumps({"dim": dim, "files": files}, indent=2) + "\n")
