"""Audio decoding and log-mel spectrogram extraction."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_FLOOR = 1e-10

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class AudioReadError(Exception):
    """Raised for unreadable or unsupported audio files."""


@dataclass
class AudioClip:
    """Mono audio in [-1, 1]. Multichannel sources keep channel 0 only."""

    samples: np.ndarray
    sample_rate: int
    recording_id: str

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    frame_ms: float = 40.0
    hop_ms: float = 20.0
    n_mels: int = 128
    log_floor: float = LOG_FLOOR

    def frame_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.frame_ms / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.hop_ms / 1000.0))

    @property
    def hop_s(self) -> float:
        return self.hop_ms / 1000.0


@dataclass
class LogMelSpectrogram:
    """T x B matrix of natural-log mel band energies."""

    values: np.ndarray
    recording_id: str
    frame_length_ms: float = 40.0
    hop_ms: float = 20.0

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]

    @property
    def hop_s(self) -> float:
        return self.hop_ms / 1000.0


def load_audio(path: str | Path, recording_id: str | None = None) -> AudioClip:
    """Decode a PCM WAV file into a normalized mono clip.

    Supports 8/16/24-bit integer and 32-bit integer/float encodings.
    Only the first channel of multichannel files is kept; the sample
    rate is preserved as stored.
    """
    path = Path(path)
    if recording_id is None:
        recording_id = path.stem
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise AudioReadError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioReadError(f"{path} is not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise AudioReadError(f"{path}: missing fmt or data chunk")

    tag, n_channels, sample_rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 40:
        (tag,) = struct.unpack("<H", fmt[24:26])  # subformat GUID leads with the tag

    if tag == WAVE_FORMAT_PCM and bits == 8:
        x = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
        samples = (x - 128.0) / 128.0
    elif tag == WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64)
        samples = x / 32768.0
    elif tag == WAVE_FORMAT_PCM and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8)
        b = b[: (len(b) // 3) * 3].reshape(-1, 3).astype(np.int64)
        x = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        x = np.where(x >= 1 << 23, x - (1 << 24), x).astype(np.float64)
        samples = x / float(1 << 23)
    elif tag == WAVE_FORMAT_PCM and bits == 32:
        x = np.frombuffer(data, dtype="<i4").astype(np.float64)
        samples = x / float(1 << 31)
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise AudioReadError(f"{path}: unsupported encoding (tag={tag}, bits={bits})")

    if n_channels < 1:
        raise AudioReadError(f"{path}: invalid channel count")
    if n_channels > 1:
        samples = samples[: (len(samples) // n_channels) * n_channels]
        samples = samples.reshape(-1, n_channels)[:, 0]
    samples = np.ascontiguousarray(samples)
    if len(samples) == 0:
        raise AudioReadError(f"{path}: zero-length audio")
    return AudioClip(samples=samples, sample_rate=int(sample_rate), recording_id=recording_id)


def write_wav_pcm16(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono float samples in [-1, 1] as 16-bit PCM WAV.

    Scaling by 2^15 inverts the reader exactly, so decode-encode round
    trips are lossless; +1.0 saturates to the largest positive code.
    """
    x = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(data))
    Path(path).write_bytes(hdr + data)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequencies (Hz) of the triangular mel bands, 0..Nyquist."""
    edges = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(edges[1:-1])


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters (n_mels x n_fft//2+1), HTK scale, unnormalized."""
    n_bins = n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / n_fft
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / max(mid - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - mid, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def frame_count(n_samples: int, frame_samples: int, hop_samples: int) -> int:
    if n_samples < frame_samples:
        return 0
    return (n_samples - frame_samples) // hop_samples + 1


def compute_logmel(clip: AudioClip, config: FeatureConfig = FeatureConfig()) -> LogMelSpectrogram:
    """Log mel-band energies with Hanning windowing and power-spectrum filters.

    Frames the signal (no padding), windows each frame, takes the
    magnitude-squared FFT and applies triangular mel filters spanning
    0..Nyquist before log(energy + floor).
    """
    frame = config.frame_samples(clip.sample_rate)
    hop = config.hop_samples(clip.sample_rate)
    n = len(clip.samples)
    T = frame_count(n, frame, hop)
    if T < 1:
        raise ValueError(
            f"clip {clip.recording_id!r} shorter than one frame "
            f"({n} samples < {frame})"
        )
    n_fft = 1
    while n_fft < frame:
        n_fft *= 2

    idx = np.arange(T)[:, None] * hop + np.arange(frame)[None, :]
    frames = clip.samples[idx] * np.hanning(frame)[None, :]
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    fb = mel_filterbank(config.n_mels, n_fft, clip.sample_rate)
    energies = power @ fb.T
    values = np.log(energies + config.log_floor)
    return LogMelSpectrogram(
        values=values,
        recording_id=clip.recording_id,
        frame_length_ms=config.frame_ms,
        hop_ms=config.hop_ms,
    )


LMEL_MAGIC = b"LMEL"


def save_logmel(spec: LogMelSpectrogram, path: str | Path) -> None:
    """Cache format: magic 'LMEL', u32 T, u32 B, T*B float32 row-major, LE."""
    t, b = spec.values.shape
    payload = LMEL_MAGIC + struct.pack("<II", t, b)
    payload += spec.values.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(payload)


def load_logmel(path: str | Path, recording_id: str,
                config: FeatureConfig = FeatureConfig()) -> LogMelSpectrogram:
    raw = Path(path).read_bytes()
    if raw[:4] != LMEL_MAGIC:
        raise ValueError(f"{path}: bad magic")
    t, b = struct.unpack("<II", raw[4:12])
    values = np.frombuffer(raw[12:], dtype="<f4").reshape(t, b).astype(np.float64)
    return LogMelSpectrogram(values=values, recording_id=recording_id,
                             frame_length_ms=config.frame_ms, hop_ms=config.hop_ms)
