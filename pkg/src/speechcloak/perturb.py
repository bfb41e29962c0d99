"""Gradient attacks on the white-box speaker encoder: per-clip offline
projected gradient descent, the universal perturbation header for the stream
start, and the band-weighted amplitude projection that keeps perturbation
energy out of the hearing-sensitive band.

Amplitudes are unitless fractions of the corpus log-mel dynamic range; the
effective bound is eps * (p99 - p1) of training log-mel values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, pgd_step
from .spectral import SpectralConfig, band_partition, mel_filterbank, mel_gain_interp


class InsufficientClipsError(ValueError):
    pass


@dataclass
class BandWeights:
    """Per-mel-row L-infinity bounds: low band 1.15x, mid band (hearing
    sensitive) 0.85x, high band 1.00x the base amplitude."""
    eps_per_bin: np.ndarray
    base_eps: float
    low_bins: np.ndarray
    mid_bins: np.ndarray
    high_bins: np.ndarray

    def band_maxima(self, delta: np.ndarray):
        def m(bins):
            return float(np.max(np.abs(delta[bins]))) if len(bins) else 0.0
        return m(self.low_bins), m(self.mid_bins), m(self.high_bins)

    def bounds(self):
        return (1.15 * self.base_eps, 0.85 * self.base_eps, 1.00 * self.base_eps)


def make_band_weights(cfg: SpectralConfig, eps_effective: float,
                      low_edge=1600.0, high_edge=4000.0,
                      low_mult=1.15, mid_mult=0.85, high_mult=1.00) -> BandWeights:
    low, mid, high = band_partition(cfg, low_edge, high_edge)
    eps = np.empty(cfg.n_mels)
    eps[low] = low_mult * eps_effective
    eps[mid] = mid_mult * eps_effective
    eps[high] = high_mult * eps_effective
    return BandWeights(eps_per_bin=eps, base_eps=float(eps_effective),
                       low_bins=low, mid_bins=mid, high_bins=high)


def dynamic_range(mels) -> float:
    """p99 - p1 of pooled log-mel values; the amplitude anchor."""
    samples = np.concatenate([np.asarray(m).ravel() for m in mels])
    p1, p99 = np.percentile(samples, [1.0, 99.0])
    return float(p99 - p1)


def project_banded(delta: np.ndarray, bw: BandWeights) -> np.ndarray:
    lim = bw.eps_per_bin[:, None]
    return np.clip(delta, -lim, lim)


def apply_delta(mel_values: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Add a perturbation aligned at frame 0, truncating or zero-extending it
    to the clip length."""
    out = mel_values.copy()
    f = min(mel_values.shape[1], delta.shape[1])
    out[:, :f] += delta[:, :f]
    return out


def _padded_delta_tensor(delta: Tensor, n_frames: int) -> Tensor:
    df = delta.data.shape[1]
    if df == n_frames:
        return delta
    if df > n_frames:
        return ad.narrow(delta, 1, 0, n_frames)
    zeros = ad.constant(np.zeros((delta.data.shape[0], n_frames - df)))
    return ad.concat([delta, zeros], axis=1)


def perturbed_mel_tensor(mel_values: np.ndarray, delta: Tensor,
                         cfg: SpectralConfig | None = None,
                         linear_mag: np.ndarray | None = None) -> Tensor:
    """Differentiable log-mel the encoder will actually observe.

    With a spectral config and the clip's clean linear magnitudes, the
    perturbation goes through the renderer's gain-field model: a log-mel
    delta scales existing spectral energy (silent cells cannot change), so
    optimizing through this operator keeps attacks honest about what the
    audio injection can deliver.  Without a config the raw sum is returned
    (pure mel-domain semantics)."""
    padded = _padded_delta_tensor(delta, mel_values.shape[1])
    if cfg is None or linear_mag is None:
        return ad.add(ad.constant(mel_values), padded)
    c, _ = mel_gain_interp(cfg)
    gains = ad.matmul(ad.constant(c), ad.exp(padded))
    scaled = ad.mul(ad.constant(linear_mag), gains)
    return ad.log1p(ad.matmul(ad.constant(mel_filterbank(cfg)), scaled))


def attack_loss(mel_values: np.ndarray, delta: Tensor, encoder,
                emb_target: np.ndarray, emb_victim: np.ndarray, lam: float,
                cfg: SpectralConfig | None = None,
                linear_mag: np.ndarray | None = None) -> Tensor:
    """MSE(E(x+d), target) - lam * MSE(E(x+d), victim); differentiable in d."""
    if delta.data.shape[0] != mel_values.shape[0]:
        raise ad.ShapeMismatchError(
            f"attack_loss: delta rows {delta.data.shape[0]} vs mel rows {mel_values.shape[0]}"
        )
    emb = encoder.embed_tensor(perturbed_mel_tensor(mel_values, delta, cfg, linear_mag))
    loss = ad.mse(emb, ad.constant(emb_target))
    if lam != 0.0:
        loss = ad.sub(loss, ad.scalar_mul(ad.mse(emb, ad.constant(emb_victim)), lam))
    return loss


@dataclass
class TraceRow:
    iteration: int
    loss: float
    max_low: float
    max_mid: float
    max_high: float


def write_trace_csv(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "loss", "max_abs_low", "max_abs_mid", "max_abs_high"])
        for row in trace:
            w.writerow([row.iteration, f"{row.loss:.8f}", f"{row.max_low:.8f}",
                        f"{row.max_mid:.8f}", f"{row.max_high:.8f}"])


def pgd_offline(mel_values: np.ndarray, encoder, emb_victim: np.ndarray,
                emb_target: np.ndarray, bw: BandWeights, lam=1.0, iterations=1500,
                step_fraction=25.0, cfg: SpectralConfig | None = None,
                linear_mag: np.ndarray | None = None):
    """Per-clip attack: sign-gradient steps with banded projection.

    Returns (protected mel, delta, trace)."""
    if bw.base_eps == 0.0:
        zero = np.zeros_like(mel_values)
        return mel_values.copy(), zero, [TraceRow(0, 0.0, 0.0, 0.0, 0.0)]
    step = step_fraction * bw.base_eps / iterations
    delta = np.zeros_like(mel_values)
    trace = []
    encoder.set_trainable(False)
    try:
        for it in range(iterations):
            leaf = Tensor(delta, requires_grad=True)
            loss = attack_loss(mel_values, leaf, encoder, emb_target, emb_victim, lam,
                               cfg, linear_mag)
            backward(loss)
            delta = project_banded(pgd_step(delta, leaf.grad, step), bw)
            lo, mi, hi = bw.band_maxima(delta)
            trace.append(TraceRow(it, float(loss.data), lo, mi, hi))
    finally:
        encoder.set_trainable(True)
    return apply_delta(mel_values, delta), delta, trace


def train_universal_header(victim_mels, encoder, emb_target: np.ndarray,
                           bw: BandWeights, header_frames: int, lam=1.0,
                           iterations=500, batch_size=8, seed=0,
                           cfg: SpectralConfig | None = None,
                           linear_mags=None):
    """One perturbation effective on arbitrary clips of the victim, trained by
    mini-batch projected gradient descent over start-aligned crops.

    Returns (delta_header, trace)."""
    if len(victim_mels) < 10:
        raise InsufficientClipsError(
            f"universal header needs >= 10 victim clips, got {len(victim_mels)}"
        )
    crops, mag_crops = [], []
    for i, m in enumerate(victim_mels):
        if m.shape[1] < header_frames:
            raise InsufficientClipsError(
                f"clip has {m.shape[1]} frames, header needs {header_frames}"
            )
        crops.append(np.ascontiguousarray(m[:, :header_frames]))
        if linear_mags is not None:
            mag_crops.append(np.ascontiguousarray(linear_mags[i][:, :header_frames]))
    n_mels = crops[0].shape[0]
    if bw.base_eps == 0.0:
        return np.zeros((n_mels, header_frames)), [TraceRow(0, 0.0, 0.0, 0.0, 0.0)]

    encoder.set_trainable(False)
    try:
        own_embs = [encoder.embed(c) for c in crops]
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(crops))
        pos = 0
        step = 25.0 * bw.base_eps / iterations
        delta = np.zeros((n_mels, header_frames))
        trace = []
        for it in range(iterations):
            if pos + batch_size > len(order):
                order = rng.permutation(len(crops))
                pos = 0
            batch = order[pos:pos + batch_size]
            pos += batch_size
            leaf = Tensor(delta, requires_grad=True)
            total = None
            for idx in batch:
                mag = mag_crops[idx] if mag_crops else None
                loss = attack_loss(crops[idx], leaf, encoder, emb_target, own_embs[idx],
                                   lam, cfg, mag)
                total = loss if total is None else ad.add(total, loss)
            total = ad.scalar_mul(total, 1.0 / len(batch))
            backward(total)
            delta = project_banded(pgd_step(delta, leaf.grad, step), bw)
            lo, mi, hi = bw.band_maxima(delta)
            trace.append(TraceRow(it, float(total.data), lo, mi, hi))
    finally:
        encoder.set_trainable(True)
    return delta, trace


def add_random_noise(mel_values: np.ndarray, eps_n: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Weak baseline: uniform mel-domain noise in [-eps_n, eps_n]."""
    if eps_n == 0.0:
        return mel_values.copy()
    return mel_values + rng.uniform(-eps_n, eps_n, size=mel_values.shape)


def tile_header(delta_h: np.ndarray, n_frames: int, eps_p: float) -> np.ndarray:
    """Header rescaled to L-infinity eps_p and tiled end to end (last tile
    truncated)."""
    peak = np.max(np.abs(delta_h))
    scaled = delta_h * (eps_p / peak) if peak > 0 else np.zeros_like(delta_h)
    reps = int(np.ceil(n_frames / delta_h.shape[1]))
    return np.tile(scaled, (1, reps))[:, :n_frames]


def add_periodic_header(mel_values: np.ndarray, delta_h: np.ndarray,
                        eps_p: float) -> np.ndarray:
    return mel_values + tile_header(delta_h, mel_values.shape[1], eps_p)
