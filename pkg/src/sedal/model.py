"""Attention-pooled sound event detector with hand-written gradients.

The network scores each frame from a context-stacked embedding window:
hidden ReLU layer, a sigmoid classifier head producing per-class frame
probabilities p_t, and an attention head producing positive pooling
weights w_t. An annotated region contributes to the loss through the
attention-weighted average of its frame probabilities (weak mode) or
through frame-wise cross-entropy (strong mode); frames outside
annotated regions only ever enter as stacking context.

Backpropagation and the adaptive-moment parameter updates are written
out explicitly so gradients can be audited against finite differences.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSequence, stack_context_rows

PROB_CLIP = 1e-7
ATT_CLIP = 10.0

PARAM_NAMES = ("w1", "b1", "wc", "bc", "wa", "ba")


@dataclass
class SedModel:
    context: int
    class_names: list[str]
    w1: np.ndarray  # (2c+1)*D x H
    b1: np.ndarray
    wc: np.ndarray  # H x C, classifier head
    bc: np.ndarray
    wa: np.ndarray  # H x C, attention head
    ba: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0] // (2 * self.context + 1)

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for name in PARAM_NAMES:
            setattr(self, name, values[name])

    def copy(self) -> "SedModel":
        return SedModel(context=self.context, class_names=list(self.class_names),
                        **{k: v.copy() for k, v in self.params().items()})


@dataclass
class EnsembleModel:
    """Independently initialized models answering as one.

    Inference averages the members' frame probabilities, so a single
    member that learned a broad false alarm is outvoted. Everything
    downstream of forward() accepts either flavor.
    """

    members: list

    def __post_init__(self):
        if not self.members:
            raise ValueError("empty ensemble")
        first = self.members[0]
        for m in self.members[1:]:
            if m.context != first.context or m.class_names != first.class_names:
                raise ValueError("ensemble members disagree on shape")

    @property
    def context(self) -> int:
        return self.members[0].context

    @property
    def class_names(self) -> list[str]:
        return self.members[0].class_names

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    @property
    def n_classes(self) -> int:
        return self.members[0].n_classes


def init_model(dim: int, n_hidden: int, class_names: list[str],
               context: int = 2, seed: int = 0) -> SedModel:
    """Scaled-uniform initialization, symmetric around zero."""
    rng = np.random.default_rng(seed)
    c = len(class_names)
    in_dim = (2 * context + 1) * dim

    def uniform(n_in, n_out):
        s = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-s, s, size=(n_in, n_out))

    return SedModel(
        context=context,
        class_names=list(class_names),
        w1=uniform(in_dim, n_hidden),
        b1=np.zeros(n_hidden),
        wc=uniform(n_hidden, c),
        # Low prior: frames the pooling never supervises must default to
        # inactive, or background pockets sit at p=0.5 and dither across
        # the decode threshold.
        bc=np.full(c, -2.0),
        wa=uniform(n_hidden, c),
        ba=np.zeros(c),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_rows(model: SedModel, x: np.ndarray):
    """Heads on pre-stacked input rows; returns intermediates for backprop."""
    hid_pre = x @ model.w1 + model.b1
    hid = np.maximum(hid_pre, 0.0)
    p = _sigmoid(hid @ model.wc + model.bc)
    score = hid @ model.wa + model.ba
    score_clipped = np.clip(score, -ATT_CLIP, ATT_CLIP)
    w = np.exp(score_clipped)
    return p, w, hid, hid_pre, score


def forward(model, emb: EmbeddingSequence):
    """Frame probabilities and attention weights for a full recording.

    An ensemble answers with the members' averages.
    """
    if isinstance(model, EnsembleModel):
        outs = [forward(m, emb) for m in model.members]
        return (np.mean([p for p, _ in outs], axis=0),
                np.mean([w for _, w in outs], axis=0))
    if emb.dim != model.input_dim:
        raise ValueError(f"embedding dim {emb.dim} != model dim {model.input_dim}")
    rows = np.arange(emb.n_frames)
    x = stack_context_rows(emb.values, rows, model.context)
    p, w, _, _, _ = _forward_rows(model, x)
    return p, w


def attention_pool(p: np.ndarray, w: np.ndarray, start: int, end: int) -> np.ndarray:
    """Per-class weighted average of p over [start, end)."""
    if end <= start:
        raise ValueError("empty region")
    ws = w[start:end]
    return (ws * p[start:end]).sum(axis=0) / ws.sum(axis=0)


def weak_loss(o: np.ndarray, tau: np.ndarray) -> float:
    oc = np.clip(o, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.sum(tau * np.log(oc) + (1.0 - tau) * np.log(1.0 - oc)))


@dataclass
class TrainingExample:
    recording_id: str
    emb: EmbeddingSequence
    regions: list  # (start_frame, end_frame, target vector)


@dataclass
class TrainingConfig:
    n_hidden: int = 64
    context: int = 2
    learning_rate: float = 1e-3
    batch_recordings: int = 8
    max_epochs: int = 200
    min_epochs: int = 10
    patience: int = 10
    val_fraction: float = 1.0 / 3.0
    # Members trained per round with independent initializations; their
    # averaged frame probabilities drive detection. A single init on a
    # small labeled pool lands in a bad basin often enough to matter,
    # and the validation split is too thin to referee.
    n_inits: int = 3


def example_loss_and_grads(model: SedModel, example: TrainingExample,
                           mode: str, region_subset: list | None = None,
                           want_grads: bool = True):
    """Loss summed over the example's regions, plus parameter gradients.

    Only frames inside regions are pushed through the network; the
    surrounding recording enters through context stacking of the input,
    which is exactly the extent to which unlabeled audio can influence
    the loss.
    """
    regions = example.regions if region_subset is None else region_subset
    if not regions:
        raise ValueError(f"{example.recording_id}: no annotated regions")
    frames = np.unique(np.concatenate([np.arange(s, e) for s, e, _ in regions]))
    row_of = {t: k for k, t in enumerate(frames)}
    x = stack_context_rows(example.emb.values, frames, model.context)
    p, w, hid, hid_pre, score = _forward_rows(model, x)

    loss = 0.0
    dp = np.zeros_like(p)
    dw = np.zeros_like(w)
    for start, end, tau in regions:
        rows = np.array([row_of[t] for t in range(start, end)])
        tau = np.asarray(tau, dtype=np.float64)
        if mode == "weak":
            pw = p[rows] * w[rows]
            z = w[rows].sum(axis=0)
            o = pw.sum(axis=0) / z
            oc = np.clip(o, PROB_CLIP, 1.0 - PROB_CLIP)
            loss += float(-np.sum(tau * np.log(oc) + (1.0 - tau) * np.log(1.0 - oc)))
            if want_grads:
                inside = (o > PROB_CLIP) & (o < 1.0 - PROB_CLIP)
                g = np.where(inside, (oc - tau) / (oc * (1.0 - oc)), 0.0)
                dp[rows] += g * w[rows] / z
                dw[rows] += g * (p[rows] - o) / z
        elif mode == "strong":
            pc = np.clip(p[rows], PROB_CLIP, 1.0 - PROB_CLIP)
            loss += float(-np.sum(tau * np.log(pc) + (1.0 - tau) * np.log(1.0 - pc)))
            if want_grads:
                inside = (p[rows] > PROB_CLIP) & (p[rows] < 1.0 - PROB_CLIP)
                dp[rows] += np.where(inside, (pc - tau) / (pc * (1.0 - pc)), 0.0)
        else:
            raise ValueError(f"unknown training mode {mode!r}")

    if not want_grads:
        return loss, None

    da = dp * p * (1.0 - p)  # through the classifier sigmoid
    ds = dw * w  # through exp; zero where the score clip is active
    ds[np.abs(score) > ATT_CLIP] = 0.0
    dhid = da @ model.wc.T + ds @ model.wa.T
    dhid[hid_pre <= 0.0] = 0.0
    grads = {
        "w1": x.T @ dhid,
        "b1": dhid.sum(axis=0),
        "wc": hid.T @ da,
        "bc": da.sum(axis=0),
        "wa": hid.T @ ds,
        "ba": ds.sum(axis=0),
    }
    return loss, grads


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1


def _split_regions(examples: list[TrainingExample], rng, val_fraction: float):
    """Region-level split; returns (train, val) as example -> region lists."""
    flat = []
    for ex in examples:
        for region in ex.regions:
            flat.append((ex.recording_id, region))
    order = rng.permutation(len(flat))
    n_val = int(len(flat) * val_fraction)
    val_keys = {int(k) for k in order[:n_val]}
    train: dict[str, list] = {}
    val: dict[str, list] = {}
    for k, (rid, region) in enumerate(flat):
        (val if k in val_keys else train).setdefault(rid, []).append(region)
    return train, val


class Adam:
    def __init__(self, shapes: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k in params:
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * grads[k]
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * grads[k] ** 2
            mhat = self.m[k] / (1 - self.beta1 ** self.t)
            vhat = self.v[k] / (1 - self.beta2 ** self.t)
            out[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def train(examples: list[TrainingExample], class_names: list[str], mode: str,
          config: TrainingConfig, seed: int) -> tuple[SedModel, TrainingHistory]:
    """Train a fresh model on the given partially labeled examples.

    One third of the regions is held out for validation; early stopping
    keeps the parameters from the best validation epoch. When the split
    leaves no validation regions, the running training loss is used as
    the stopping signal instead.
    """
    usable = [ex for ex in examples if ex.regions]
    if not usable:
        raise ValueError("no annotated regions in any example")
    dim = usable[0].emb.dim
    rng = np.random.default_rng(seed)
    model = init_model(dim=dim, n_hidden=config.n_hidden, class_names=class_names,
                       context=config.context, seed=int(rng.integers(2**31)))

    train_regions, val_regions = _split_regions(usable, rng, config.val_fraction)
    by_id = {ex.recording_id: ex for ex in usable}
    train_ids = sorted(train_regions)
    val_ids = sorted(val_regions)
    if not train_ids:  # degenerate split, train on everything
        train_regions = {ex.recording_id: list(ex.regions) for ex in usable}
        train_ids = sorted(train_regions)
        val_ids = []

    opt = Adam({k: v.shape for k, v in model.params().items()}, lr=config.learning_rate)
    history = TrainingHistory()
    best_loss = np.inf
    best_params = {k: v.copy() for k, v in model.params().items()}
    best_epoch = -1
    since_best = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_ids))
        epoch_loss = 0.0
        for b0 in range(0, len(order), config.batch_recordings):
            batch = sorted(train_ids[k] for k in order[b0 : b0 + config.batch_recordings])
            params = model.params()
            total = {k: np.zeros_like(v) for k, v in params.items()}
            batch_loss = 0.0
            for rid in batch:  # sorted: deterministic accumulation order
                loss, grads = example_loss_and_grads(
                    model, by_id[rid], mode, region_subset=train_regions[rid])
                batch_loss += loss
                for k in total:
                    total[k] += grads[k]
            if not np.isfinite(batch_loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            scale = 1.0 / len(batch)
            model.set_params(opt.step(params, {k: g * scale for k, g in total.items()}))
            epoch_loss += batch_loss
        epoch_loss /= max(1, len(train_ids))
        history.train_loss.append(epoch_loss)

        if val_ids:
            monitored = sum(
                example_loss_and_grads(model, by_id[rid], mode,
                                       region_subset=val_regions[rid],
                                       want_grads=False)[0]
                for rid in val_ids
            ) / len(val_ids)
        else:
            monitored = epoch_loss
        history.val_loss.append(monitored)

        if monitored < best_loss:
            best_loss = monitored
            best_params = {k: v.copy() for k, v in model.params().items()}
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        if epoch + 1 >= config.min_epochs and since_best >= config.patience:
            break

    model.set_params(best_params)
    history.best_epoch = best_epoch
    history.stopped_epoch = len(history.train_loss) - 1
    return model, history


def train_ensemble(examples: list[TrainingExample], class_names: list[str],
                   mode: str, config: TrainingConfig, seed: int):
    """Train config.n_inits members and combine them.

    Member 0 trains under the given seed unchanged; the rest derive
    theirs from it, so a one-member config reproduces a plain train()
    call exactly. The returned history is member 0's.
    """
    if config.n_inits <= 1:
        return train(examples, class_names, mode, config, seed)
    members = []
    history = None
    for k in range(config.n_inits):
        member_seed = seed if k == 0 else \
            int(np.random.default_rng((seed, 131, k)).integers(2**63))
        model, h = train(examples, class_names, mode, config, member_seed)
        members.append(model)
        history = history or h
    return EnsembleModel(members), history


@dataclass
class DetectedEvent:
    class_name: str
    onset_s: float
    offset_s: float


def decode_activity(active: np.ndarray, hop_s: float,
                    min_len_s: float = 0.1, max_gap_s: float = 0.1) -> list[tuple[int, int]]:
    """Run-length post-processing of a boolean frame sequence.

    Gaps strictly shorter than max_gap_s are bridged first, then runs
    strictly shorter than min_len_s are dropped.
    """
    runs = []
    t = 0
    n = len(active)
    while t < n:
        if active[t]:
            start = t
            while t < n and active[t]:
                t += 1
            runs.append([start, t])
        else:
            t += 1
    min_gap = int(np.ceil(max_gap_s / hop_s))  # gap of this many frames stays
    merged = []
    for run in runs:
        if merged and run[0] - merged[-1][1] < min_gap:
            merged[-1][1] = run[1]
        else:
            merged.append(run)
    min_len = int(np.ceil(min_len_s / hop_s))  # run of this many frames stays
    return [(a, b) for a, b in merged if b - a >= min_len]


def detect_events(model: SedModel, emb: EmbeddingSequence,
                  threshold: float = 0.5) -> list[DetectedEvent]:
    """Threshold frame probabilities and decode runs into events."""
    p, _ = forward(model, emb)
    events = []
    for ci, cname in enumerate(model.class_names):
        for a, b in decode_activity(p[:, ci] > threshold, emb.hop_s):
            events.append(DetectedEvent(class_name=cname, onset_s=a * emb.hop_s,
                                        offset_s=b * emb.hop_s))
    events.sort(key=lambda e: (e.onset_s, e.class_name))
    return events


MODEL_MAGIC = b"SEDM"
ENSEMBLE_MAGIC = b"SEDE"


def _encode_single(model: SedModel) -> bytes:
    out = bytearray()
    out += struct.pack("<IIII", model.context, model.input_dim, model.hidden,
                       model.n_classes)
    for name in model.class_names:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
    for name in PARAM_NAMES:
        out += getattr(model, name).astype("<f4").tobytes(order="C")
    return bytes(out)


def _decode_single(raw: bytes, pos: int) -> tuple[SedModel, int]:
    context, dim, hidden, n_classes = struct.unpack("<IIII", raw[pos : pos + 16])
    pos += 16
    class_names = []
    for _ in range(n_classes):
        (ln,) = struct.unpack("<H", raw[pos : pos + 2])
        pos += 2
        class_names.append(raw[pos : pos + ln].decode("utf-8"))
        pos += ln
    in_dim = (2 * context + 1) * dim
    shapes = {
        "w1": (in_dim, hidden), "b1": (hidden,),
        "wc": (hidden, n_classes), "bc": (n_classes,),
        "wa": (hidden, n_classes), "ba": (n_classes,),
    }
    params = {}
    for name in PARAM_NAMES:
        count = int(np.prod(shapes[name]))
        block = np.frombuffer(raw[pos : pos + 4 * count], dtype="<f4")
        params[name] = block.reshape(shapes[name]).astype(np.float64)
        pos += 4 * count
    return SedModel(context=context, class_names=class_names, **params), pos


def save_model(model, path: str | Path) -> None:
    """Checkpoint: magic, u32 context/D/H/C, class names, float32 blocks.

    An ensemble writes its own magic, a member count, then the members
    back to back in the single-model layout.
    """
    if isinstance(model, EnsembleModel):
        out = ENSEMBLE_MAGIC + struct.pack("<I", len(model.members))
        out += b"".join(_encode_single(m) for m in model.members)
        Path(path).write_bytes(out)
        return
    Path(path).write_bytes(MODEL_MAGIC + _encode_single(model))


def load_model(path: str | Path):
    raw = Path(path).read_bytes()
    if raw[:4] == ENSEMBLE_MAGIC:
        (count,) = struct.unpack("<I", raw[4:8])
        pos = 8
        members = []
        for _ in range(count):
            member, pos = _decode_single(raw, pos)
            members.append(member)
        return EnsembleModel(members)
    if raw[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic")
    model, _ = _decode_single(raw, 4)
    return model
