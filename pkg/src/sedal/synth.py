"""Synthetic corpus generation and the simulated annotator.

Recordings are colored-noise backgrounds with parametric sound events
mixed in at a controlled event-to-background ratio. Everything is
derived from (seed, recording index), so generation is reproducible
bit for bit and recordings can be rendered in any order.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import AudioClip, write_wav_pcm16
from .segmentation import CandidateSegment

PERCEPTION_FLOOR_S = 0.1


@dataclass(frozen=True)
class EventTemplate:
    """One target class: a waveform family plus duration and parameter ranges."""

    name: str
    kind: str  # tone | chirp | noise | am_tone | clicks
    dur_range: tuple[float, float]
    freq_range: tuple[float, float] = (400.0, 1200.0)
    chirp_octaves: float = 2.0
    mod_rate_hz: float = 6.0
    click_rate_hz: float = 12.0


@dataclass(frozen=True)
class GeneratorSpec:
    seed: int
    n_recordings: int
    classes: tuple[EventTemplate, ...]
    events_per_minute: float
    ebr_db: tuple[float, ...] = (-6.0, 0.0, 6.0)
    recording_len_s: float = 30.0
    sample_rate: int = 16000
    background_alphas: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0)
    background_rms: float = 0.02


@dataclass
class TruthEvent:
    class_name: str
    onset_s: float
    offset_s: float
    ebr_db: float = 0.0
    event_rms: float = 0.0
    background_rms: float = 0.0

    @property
    def duration_s(self) -> float:
        return self.offset_s - self.onset_s


@dataclass
class GroundTruth:
    events: dict[str, list[TruthEvent]]
    durations: dict[str, float]
    class_names: list[str]

    def total_duration_s(self) -> float:
        return sum(self.durations.values())

    def positive_fraction(self) -> float:
        """Share of total duration covered by at least one event."""
        covered = 0.0
        for events in self.events.values():
            last_end = 0.0
            for on, off in sorted((e.onset_s, e.offset_s) for e in events):
                if off <= last_end:
                    continue
                covered += off - max(on, last_end)
                last_end = off
        total = self.total_duration_s()
        return covered / total if total else 0.0


def _ramped(x: np.ndarray, sr: int, ramp_s: float = 0.01) -> np.ndarray:
    n = min(len(x) // 2, max(1, int(ramp_s * sr)))
    env = np.ones(len(x))
    ramp = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, n))
    env[:n] = ramp
    env[-n:] = ramp[::-1]
    return x * env


def render_event(template: EventTemplate, duration_s: float, sr: int, rng) -> np.ndarray:
    """Unit-scale waveform for one event instance."""
    n = max(1, int(round(duration_s * sr)))
    t = np.arange(n) / sr
    if template.kind == "tone":
        f = rng.uniform(*template.freq_range)
        x = np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    elif template.kind == "chirp":
        f0 = rng.uniform(*template.freq_range)
        f1 = f0 * (2.0 ** template.chirp_octaves)
        x = np.sin(2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * duration_s)))
    elif template.kind == "noise":
        x = rng.standard_normal(n)
        lo, hi = template.freq_range
        spec = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        spec[(freqs < lo) | (freqs > hi)] = 0.0
        x = np.fft.irfft(spec, n=n)
        peak = np.abs(x).max()
        if peak > 0:
            x = x / peak
    elif template.kind == "am_tone":
        f = rng.uniform(*template.freq_range)
        x = np.sin(2 * np.pi * f * t) * (1.0 + 0.9 * np.sin(2 * np.pi * template.mod_rate_hz * t)) / 1.9
    elif template.kind == "clicks":
        x = np.zeros(n)
        period = max(1, int(round(sr / template.click_rate_hz)))
        click_len = max(1, int(0.004 * sr))
        decay = np.exp(-np.arange(click_len) / (0.001 * sr))
        for start in range(0, n - click_len, period):
            x[start : start + click_len] += decay * rng.standard_normal(click_len)
        peak = np.abs(x).max()
        if peak > 0:
            x = x / peak
    else:
        raise ValueError(f"unknown template kind {template.kind!r}")
    return _ramped(x, sr)


def render_background(spec: GeneratorSpec, rec_index: int) -> np.ndarray:
    """Colored noise for one recording, deterministic in (seed, index)."""
    rng = np.random.default_rng((spec.seed, rec_index, 0))
    n = int(round(spec.recording_len_s * spec.sample_rate))
    alpha = spec.background_alphas[int(rng.integers(len(spec.background_alphas)))]
    white = rng.standard_normal(n)
    freqs = np.fft.rfftfreq(n, 1.0 / spec.sample_rate)
    shape = 1.0 / np.maximum(freqs, 20.0) ** (alpha / 2.0)  # flat below 20 Hz
    x = np.fft.irfft(np.fft.rfft(white) * shape, n=n)
    rms = float(np.sqrt(np.mean(x**2)))
    return x * (spec.background_rms / rms)


def scale_event_to_ebr(event: np.ndarray, background_span: np.ndarray,
                       ebr_db: float) -> np.ndarray:
    """Scale so event RMS over its span is EBR dB above the background's."""
    ev_rms = float(np.sqrt(np.mean(event**2)))
    bg_rms = float(np.sqrt(np.mean(background_span**2)))
    if ev_rms < 1e-12:
        return event
    target = max(bg_rms, 1e-12) * 10.0 ** (ebr_db / 20.0)
    return event * (target / ev_rms)


def recording_id(spec: GeneratorSpec, rec_index: int) -> str:
    return f"rec_{spec.seed:04d}_{rec_index:04d}"


def generate_recording(spec: GeneratorSpec, rec_index: int) -> tuple[AudioClip, list[TruthEvent]]:
    rng = np.random.default_rng((spec.seed, rec_index, 1))
    sr = spec.sample_rate
    n = int(round(spec.recording_len_s * sr))
    background = render_background(spec, rec_index)
    mix = background.copy()

    n_events = int(rng.poisson(spec.events_per_minute * spec.recording_len_s / 60.0))
    events: list[TruthEvent] = []
    for _ in range(n_events):
        template = spec.classes[int(rng.integers(len(spec.classes)))]
        duration = float(rng.uniform(*template.dur_range))
        if duration > spec.recording_len_s:
            raise ValueError(
                f"template {template.name}: event of {duration} s cannot fit "
                f"a {spec.recording_len_s} s recording"
            )
        onset = float(rng.uniform(0.0, spec.recording_len_s - duration))
        ebr = float(spec.ebr_db[int(rng.integers(len(spec.ebr_db)))])
        wave = render_event(template, duration, sr, rng)
        a = int(round(onset * sr))
        b = min(n, a + len(wave))
        wave = scale_event_to_ebr(wave[: b - a], background[a:b], ebr)
        mix[a:b] += wave
        events.append(TruthEvent(
            class_name=template.name,
            onset_s=a / sr, offset_s=b / sr,
            ebr_db=ebr,
            event_rms=float(np.sqrt(np.mean(wave**2))),
            background_rms=float(np.sqrt(np.mean(background[a:b] ** 2))),
        ))

    peak = float(np.abs(mix).max())
    if peak > 0.99:  # common rescale preserves every event's ratio
        scale = 0.99 / peak
        mix *= scale
        for ev in events:
            ev.event_rms *= scale
            ev.background_rms *= scale
    events.sort(key=lambda e: (e.onset_s, e.class_name))
    rid = recording_id(spec, rec_index)
    return AudioClip(samples=mix, sample_rate=sr, recording_id=rid), events


def generate(spec: GeneratorSpec) -> tuple[list[AudioClip], GroundTruth]:
    clips = []
    truth = GroundTruth(events={}, durations={},
                        class_names=[t.name for t in spec.classes])
    for i in range(spec.n_recordings):
        clip, events = generate_recording(spec, i)
        clips.append(clip)
        truth.events[clip.recording_id] = events
        truth.durations[clip.recording_id] = clip.duration_s
    return clips, truth


def simulate_annotation(segment: CandidateSegment, truth: GroundTruth, mode: str = "weak"):
    """Labels a careful human would produce for the segment.

    weak: the set of classes whose events overlap the segment by more
    than 0.1 s (strictly; an annotator cannot perceive less). strong:
    the overlapping events themselves, clipped to the segment, again
    dropping anything at or under the perception floor.
    """
    if segment.recording_id not in truth.events:
        raise KeyError(f"unknown recording {segment.recording_id!r}")
    floor = PERCEPTION_FLOOR_S + 1e-9  # exact 0.1 overlaps stay unlabeled
    events = truth.events[segment.recording_id]
    if mode == "weak":
        labels = set()
        for ev in events:
            overlap = min(segment.end_s, ev.offset_s) - max(segment.start_s, ev.onset_s)
            if overlap > floor:
                labels.add(ev.class_name)
        return frozenset(labels)
    if mode == "strong":
        out = []
        for ev in events:
            on = max(segment.start_s, ev.onset_s)
            off = min(segment.end_s, ev.offset_s)
            if off - on > floor:
                out.append(dataclasses.replace(ev, onset_s=on, offset_s=off))
        return out
    raise ValueError(f"unknown annotation mode {mode!r}")


RARE_CLASSES = (
    EventTemplate(name="wail", kind="am_tone", dur_range=(0.6, 1.6),
                  freq_range=(500.0, 900.0), mod_rate_hz=5.0),
    EventTemplate(name="burst", kind="noise", dur_range=(0.25, 0.7),
                  freq_range=(2000.0, 6000.0)),
    EventTemplate(name="sweep", kind="chirp", dur_range=(0.3, 1.0),
                  freq_range=(350.0, 700.0), chirp_octaves=2.0),
)

DENSE_CLASSES = tuple(
    [EventTemplate(name=f"tone_{f}", kind="tone", dur_range=(0.2, 0.5),
                   freq_range=(float(f), float(f) * 1.2))
     for f in (300, 600, 1200, 2400)]
    + [EventTemplate(name="updown", kind="chirp", dur_range=(0.2, 0.6),
                     freq_range=(400.0, 900.0), chirp_octaves=1.5),
       EventTemplate(name="hiss", kind="noise", dur_range=(0.2, 0.5),
                     freq_range=(3000.0, 7000.0)),
       EventTemplate(name="rumble", kind="noise", dur_range=(0.3, 0.6),
                     freq_range=(60.0, 300.0)),
       EventTemplate(name="warble", kind="am_tone", dur_range=(0.3, 0.7),
                     freq_range=(800.0, 1600.0), mod_rate_hz=8.0),
       EventTemplate(name="ticker", kind="clicks", dur_range=(0.3, 0.8),
                     click_rate_hz=14.0),
       EventTemplate(name="knock", kind="clicks", dur_range=(0.2, 0.5),
                     click_rate_hz=6.0),
       EventTemplate(name="squeal", kind="chirp", dur_range=(0.2, 0.5),
                     freq_range=(2000.0, 3000.0), chirp_octaves=1.0)]
)


def rare_preset(n_recordings: int = 60, seed: int = 0) -> GeneratorSpec:
    """Rare regime: few, quiet events in long mostly-empty recordings."""
    return GeneratorSpec(seed=seed, n_recordings=n_recordings, classes=RARE_CLASSES,
                         events_per_minute=1.0, ebr_db=(-6.0, 0.0, 6.0),
                         recording_len_s=30.0)


def dense_preset(n_recordings: int = 10, seed: int = 0) -> GeneratorSpec:
    """Dense regime: loud overlapping events covering much of each minute."""
    return GeneratorSpec(seed=seed, n_recordings=n_recordings, classes=DENSE_CLASSES,
                         events_per_minute=55.0, ebr_db=(30.0,),
                         recording_len_s=60.0)


def rare_and_dense_presets() -> tuple[GeneratorSpec, GeneratorSpec]:
    return rare_preset(), dense_preset()


def save_corpus(clips: list[AudioClip], truth: GroundTruth, out_dir: str | Path,
                spec: GeneratorSpec | None = None) -> Path:
    """Write WAV files plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recordings = []
    for clip in clips:
        fname = f"{clip.recording_id}.wav"
        write_wav_pcm16(out_dir / fname, clip.samples, clip.sample_rate)
        recordings.append({
            "id": clip.recording_id,
            "file": fname,
            "duration_s": clip.duration_s,
            "events": [
                {"class": e.class_name, "onset_s": e.onset_s, "offset_s": e.offset_s,
                 "ebr_db": e.ebr_db}
                for e in truth.events[clip.recording_id]
            ],
        })
    manifest = {
        "classes": truth.class_names,
        "sample_rate": clips[0].sample_rate if clips else None,
        "seed": spec.seed if spec else None,
        "recordings": recordings,
    }
    path = out_dir / "corpus.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_corpus_manifest(path: str | Path) -> GroundTruth:
    doc = json.loads(Path(path).read_text())
    truth = GroundTruth(events={}, durations={}, class_names=list(doc["classes"]))
    for rec in doc["recordings"]:
        truth.events[rec["id"]] = [
            TruthEvent(class_name=e["class"], onset_s=e["onset_s"],
                       offset_s=e["offset_s"], ebr_db=e.get("ebr_db", 0.0))
            for e in rec["events"]
        ]
        truth.durations[rec["id"]] = rec["duration_s"]
    return truth
