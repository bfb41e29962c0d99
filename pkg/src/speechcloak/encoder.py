"""Speaker encoders: small conv nets trained by softmax speaker
classification over mel windows; the embedding is the L2-normalized
penultimate layer, mean-pooled over windows for long inputs.

Two independently configured encoders play different roles: the white-box
target that attacks differentiate through, and a held-out verifier that
judges protection without ever leaking gradients to an attack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, adam_step, backward, zero_grads
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import BatchNorm2d, Conv2d, Linear, PReLU
from .spectral import SpectralConfig, frames_for_duration


class TooShortInputError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class EncoderConfig:
    n_mels: int = 80
    window_frames: int = 122
    channels: tuple = (16, 32, 64)
    embed_dim: int = 64
    n_classes: int = 20

    def validate(self):
        if self.window_frames < 8 or self.embed_dim < 2 or len(self.channels) < 1:
            raise ValueError(f"bad encoder config: {self}")
        return self


def encoder_config_for(spectral: SpectralConfig, *, n_classes: int, embed_dim: int = 64,
                       window_seconds: float = 1.25, deep: bool = False) -> EncoderConfig:
    channels = (8, 16, 32, 64) if deep else (16, 32, 64)
    return EncoderConfig(
        n_mels=spectral.n_mels,
        window_frames=frames_for_duration(window_seconds, spectral),
        channels=channels,
        embed_dim=embed_dim,
        n_classes=n_classes,
    ).validate()


class SpeakerEncoder:
    def __init__(self, cfg: EncoderConfig, seed: int):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.blocks = []
        in_ch = 1
        for i, out_ch in enumerate(cfg.channels):
            conv = Conv2d(in_ch, out_ch, stride=(2, 2), padding=(1, 1), rng=rng,
                          name=f"block{i}.conv")
            bn = BatchNorm2d(out_ch, name=f"block{i}.bn")
            act = PReLU(name=f"block{i}.prelu")
            self.blocks.append((conv, bn, act))
            in_ch = out_ch
        self.head = Linear(in_ch, cfg.embed_dim, rng=rng, name="head")
        self.classifier = Linear(cfg.embed_dim, cfg.n_classes, rng=rng, name="classifier")

    def parameters(self):
        params = []
        for conv, bn, act in self.blocks:
            params += conv.parameters() + bn.parameters() + act.parameters()
        return params + self.head.parameters() + self.classifier.parameters()

    def set_trainable(self, flag: bool):
        """Frozen encoders skip weight-gradient work in attack graphs."""
        for p in self.parameters():
            p.requires_grad = bool(flag)

    def forward_embedding(self, x: Tensor, train: bool = False) -> Tensor:
        """(N, 1, n_mels, window_frames) -> (N, embed_dim), not yet normalized."""
        h = x
        for conv, bn, act in self.blocks:
            h = act.forward(bn.forward(conv.forward(h), train=train))
        h = ad.mean_axes(h, (2, 3))
        return self.head.forward(h)

    def forward_logits(self, x: Tensor, train: bool = True) -> Tensor:
        return self.classifier.forward(self.forward_embedding(x, train=train))

    def window_starts(self, n_frames: int):
        win = self.cfg.window_frames
        if n_frames < win:
            raise TooShortInputError(
                f"need at least {win} mel frames for an embedding, got {n_frames}"
            )
        starts = list(range(0, n_frames - win + 1, win))
        if starts[-1] != n_frames - win:
            starts.append(n_frames - win)
        return starts

    def embed_tensor(self, mel_values: Tensor) -> Tensor:
        """Differentiable embedding of a (n_mels, n_frames) log-mel tensor."""
        m, f = mel_values.data.shape
        if m != self.cfg.n_mels:
            raise ValueError(f"expected {self.cfg.n_mels} mel rows, got {m}")
        win = self.cfg.window_frames
        windows = [ad.reshape(ad.narrow(mel_values, 1, s, win), (1, 1, m, win))
                   for s in self.window_starts(f)]
        batch = windows[0] if len(windows) == 1 else ad.concat(windows, axis=0)
        emb = self.forward_embedding(batch, train=False)
        return ad.l2_normalize(ad.mean_axes(emb, (0,)))

    def embed(self, mel_values: np.ndarray) -> np.ndarray:
        return self.embed_tensor(ad.constant(mel_values)).data.copy()

    # checkpoint plumbing -------------------------------------------------
    def state_arrays(self):
        out = {}
        for p in self.parameters():
            out[p.name] = p.data
        for i, (_, bn, _) in enumerate(self.blocks):
            out[f"block{i}.bn.running_mean"] = bn.running_mean
            out[f"block{i}.bn.running_var"] = bn.running_var
        return out

    def load_state_arrays(self, arrays):
        for p in self.parameters():
            p.data = arrays[p.name].reshape(p.data.shape).copy()
        for i, (_, bn, _) in enumerate(self.blocks):
            bn.running_mean = arrays[f"block{i}.bn.running_mean"].copy()
            bn.running_var = arrays[f"block{i}.bn.running_var"].copy()

    def save(self, path, extra_config=None):
        cfg = {
            "kind": "speaker_encoder",
            "n_mels": self.cfg.n_mels,
            "window_frames": self.cfg.window_frames,
            "channels": list(self.cfg.channels),
            "embed_dim": self.cfg.embed_dim,
            "n_classes": self.cfg.n_classes,
        }
        if extra_config:
            cfg.update(extra_config)
        save_checkpoint(path, self.state_arrays(), cfg)

    @classmethod
    def load(cls, path):
        arrays, cfg = load_checkpoint(path)
        enc_cfg = EncoderConfig(
            n_mels=cfg["n_mels"], window_frames=cfg["window_frames"],
            channels=tuple(cfg["channels"]), embed_dim=cfg["embed_dim"],
            n_classes=cfg["n_classes"],
        )
        enc = cls(enc_cfg, seed=0)
        enc.load_state_arrays(arrays)
        return enc, cfg


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two unit-norm embeddings (a plain dot product)."""
    return float(np.dot(a, b))


def verify(a: np.ndarray, b: np.ndarray, k: float = 0.25) -> bool:
    """Same-speaker decision: strictly above the threshold passes."""
    return similarity(a, b) > k


@dataclass
class TrainLogEntry:
    epoch: int
    train_loss: float
    holdout_accuracy: float


@dataclass
class EncoderReport:
    entries: list = field(default_factory=list)
    holdout_accuracy: float = 0.0
    verification_accuracy: float = 0.0
    tuned_threshold: float = 0.0
    same_mean: float = 0.0
    diff_mean: float = 0.0


def _sample_window(values, win, rng):
    n = values.shape[1]
    if n < win:
        raise TooShortInputError(f"clip has {n} frames, window needs {win}")
    start = int(rng.integers(0, n - win + 1))
    return values[:, start:start + win]


def train_encoder(train_mels, train_labels, holdout_mels, holdout_labels,
                  cfg: EncoderConfig, seed: int, epochs=12, batch_size=32,
                  learning_rate=1e-3, steps_per_epoch=90) -> tuple:
    """Softmax speaker-classification training; returns (encoder, report)."""
    enc = SpeakerEncoder(cfg, seed)
    params = enc.parameters()
    rng = np.random.default_rng(seed + 1)
    report = EncoderReport()
    n = len(train_mels)
    for epoch in range(epochs):
        losses = []
        for _ in range(steps_per_epoch):
            idx = rng.integers(0, n, size=batch_size)
            batch = np.stack([_sample_window(train_mels[i], cfg.window_frames, rng)
                              for i in idx])[:, None]
            labels = np.asarray([train_labels[i] for i in idx])
            loss = ad.softmax_cross_entropy(enc.forward_logits(ad.constant(batch), train=True),
                                            labels)
            val = float(loss.data)
            if not np.isfinite(val):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            zero_grads(params)
            backward(loss)
            adam_step(params, lr=learning_rate)
            losses.append(val)
        acc = holdout_clip_accuracy(enc, holdout_mels, holdout_labels)
        report.entries.append(TrainLogEntry(epoch, float(np.mean(losses)), acc))
    report.holdout_accuracy = report.entries[-1].holdout_accuracy
    ver = verification_metrics(enc, holdout_mels, holdout_labels, seed=seed + 2)
    report.verification_accuracy = ver["accuracy"]
    report.tuned_threshold = ver["threshold"]
    report.same_mean = ver["same_mean"]
    report.diff_mean = ver["diff_mean"]
    return enc, report


def holdout_clip_accuracy(enc: SpeakerEncoder, mels, labels) -> float:
    correct = 0
    for values, label in zip(mels, labels):
        starts = enc.window_starts(values.shape[1])
        batch = np.stack([values[:, s:s + enc.cfg.window_frames] for s in starts])[:, None]
        logits = enc.forward_logits(ad.constant(batch), train=False).data.mean(axis=0)
        correct += int(np.argmax(logits) == label)
    return correct / max(len(mels), 1)


def embed_clips(enc: SpeakerEncoder, mels) -> np.ndarray:
    return np.stack([enc.embed(m) for m in mels])


def verification_metrics(enc: SpeakerEncoder, mels, labels, seed=0) -> dict:
    """Same/different-speaker pair accuracy at the best threshold."""
    emb = embed_clips(enc, mels)
    labels = np.asarray(labels)
    same, diff = [], []
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            (same if labels[i] == labels[j] else diff).append(float(emb[i] @ emb[j]))
    rng = np.random.default_rng(seed)
    diff = list(rng.permutation(np.asarray(diff))[:len(same)])
    scores = np.asarray(same + diff)
    truth = np.asarray([1] * len(same) + [0] * len(diff))
    best_acc, best_thr = 0.0, 0.0
    for thr in np.unique(scores):
        acc = float(np.mean((scores > thr) == truth))
        if acc > best_acc:
            best_acc, best_thr = acc, float(thr)
    return {
        "accuracy": best_acc,
        "threshold": best_thr,
        "same_mean": float(np.mean(same)) if same else 0.0,
        "diff_mean": float(np.mean(diff)) if diff else 0.0,
        "n_same": len(same),
        "n_diff": len(diff),
    }


class EmptyPoolError(ValueError):
    pass


def select_target_speaker(victim_embedding: np.ndarray, victim_pitch_class: str,
                          candidates: dict) -> int:
    """Pick the decoy speaker: the opposite-pitch-class candidate whose mean
    embedding is farthest (cosine distance) from the victim's; ties break to
    the lower speaker id.  Candidates: {speaker_id: (mean_embedding, pitch_class)}.
    """
    if not candidates:
        raise EmptyPoolError("no target candidates supplied")
    opposite = {sid: v for sid, v in candidates.items() if v[1] != victim_pitch_class}
    pool = opposite if opposite else candidates
    best_id, best_dist = None, -np.inf
    for sid in sorted(pool):
        emb, _ = pool[sid]
        dist = 1.0 - similarity(victim_embedding, emb)
        if dist > best_dist + 1e-12:
            best_id, best_dist = sid, dist
    return best_id
