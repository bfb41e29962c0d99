"""Time-frequency conversions: STFT/ISTFT, mel filterbank, mel inversion with
phase reconstruction, and frequency-band index mapping.

All transforms are frame-exact (no centering or padding): a signal of length
n yields (n - fft_size) // hop + 1 frames, and istft uses per-sample
overlap-added squared-window normalization, which reconstructs exactly
wherever that denominator is positive (true for any hop < fft_size with a
Hann window).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class InputTooShortError(ValueError):
    pass


class BandEdgeError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralConfig:
    sample_rate: int = 16000
    fft_size: int = 512
    hop: int = 160
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    griffin_lim_iters: int = 32

    def __post_init__(self):
        if self.hop <= 0 or self.hop > self.fft_size:
            raise ValueError(f"hop must be in (0, fft_size], got {self.hop}")
        if self.n_mels > self.fft_size // 2 + 1:
            raise ValueError(
                f"n_mels={self.n_mels} exceeds fft_size/2+1={self.fft_size // 2 + 1}"
            )
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError(f"need 0 <= fmin < fmax <= Nyquist, got {self.fmin}, {self.fmax}")
        den = _ola_sq_window(self.fft_size, self.hop)
        if den.min() <= 1e-8:
            raise ValueError(
                f"hop={self.hop} leaves overlap-add gaps for a {self.fft_size}-point Hann window"
            )

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class MelSpectrogram:
    """Log-compressed mel magnitudes: values = log(1 + mel_fb @ |STFT|)."""
    values: np.ndarray
    config: SpectralConfig

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.config.n_mels:
            raise ValueError(
                f"mel values must be (n_mels={self.config.n_mels}, frames), "
                f"got {self.values.shape}"
            )

    @property
    def n_frames(self):
        return self.values.shape[1]


def hann_window(n: int) -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@lru_cache(maxsize=16)
def _cached_window(n):
    return hann_window(n)


@lru_cache(maxsize=16)
def _ola_sq_window(fft_size, hop):
    """Overlap-added squared window across one interior period."""
    w2 = hann_window(fft_size) ** 2
    span = fft_size * 4
    acc = np.zeros(span + fft_size)
    for start in range(0, span, hop):
        acc[start:start + fft_size] += w2
    return acc[fft_size:span]  # interior


def frame_count(n_samples: int, cfg: SpectralConfig) -> int:
    if n_samples < cfg.fft_size:
        raise InputTooShortError(
            f"need at least fft_size={cfg.fft_size} samples, got {n_samples}"
        )
    return (n_samples - cfg.fft_size) // cfg.hop + 1


def frames_for_duration(seconds: float, cfg: SpectralConfig) -> int:
    return frame_count(int(round(seconds * cfg.sample_rate)), cfg)


def sample_span(n_frames: int, cfg: SpectralConfig) -> int:
    return (n_frames - 1) * cfg.hop + cfg.fft_size


def stft(w: Waveform, cfg: SpectralConfig) -> np.ndarray:
    """Complex spectrogram, shape (fft_size//2 + 1, n_frames)."""
    x = w.samples
    n_frames = frame_count(len(x), cfg)
    win = _cached_window(cfg.fft_size)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.fft_size)[::cfg.hop][:n_frames]
    return np.fft.rfft(frames * win, axis=1).T.copy()


def stft_frame(samples: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Single-frame complex spectrum; used by the streaming runtime."""
    if len(samples) != cfg.fft_size:
        raise InputTooShortError(f"frame needs {cfg.fft_size} samples, got {len(samples)}")
    return np.fft.rfft(samples * _cached_window(cfg.fft_size))


def istft(spec: np.ndarray, cfg: SpectralConfig, length: int | None = None) -> Waveform:
    """Weighted overlap-add inverse; exact on the interior."""
    if spec.ndim != 2 or spec.shape[0] != cfg.n_bins:
        raise ValueError(f"spectrogram must be ({cfg.n_bins}, frames), got {spec.shape}")
    n_frames = spec.shape[1]
    win = _cached_window(cfg.fft_size)
    frames = np.fft.irfft(spec.T, n=cfg.fft_size, axis=1) * win
    total = sample_span(n_frames, cfg)
    num = np.zeros(total)
    den = np.zeros(total)
    w2 = win * win
    for i in range(n_frames):
        start = i * cfg.hop
        num[start:start + cfg.fft_size] += frames[i]
        den[start:start + cfg.fft_size] += w2
    out = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
    if length is not None:
        out = out[:length] if length <= total else np.pad(out, (0, length - total))
    return Waveform(out, cfg.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _filterbank_cached(cfg: SpectralConfig):
    n_bins = cfg.n_bins
    bin_freqs = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size
    mel_pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        lo, ctr, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_freqs - lo) / max(ctr - lo, 1e-9)
        down = (hi - bin_freqs) / max(hi - ctr, 1e-9)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb, hz_pts[1:-1]


def mel_filterbank(cfg: SpectralConfig) -> np.ndarray:
    return _filterbank_cached(cfg)[0]


def mel_center_freqs(cfg: SpectralConfig) -> np.ndarray:
    """Peak frequency of each triangular filter (equally spaced in mel)."""
    return _filterbank_cached(cfg)[1]


@lru_cache(maxsize=16)
def _filterbank_pinv(cfg: SpectralConfig):
    # Tikhonov-regularized right inverse: the raw pseudo-inverse explodes
    # (adjacent low-frequency filters are linearly dependent on the bin grid),
    # which would let mel-domain edits inject unbounded linear energy.
    fb = mel_filterbank(cfg)
    smax2 = np.linalg.norm(fb, 2) ** 2
    return fb.T @ np.linalg.inv(fb @ fb.T + 1e-4 * smax2 * np.eye(cfg.n_mels))


def wav_to_mel(w: Waveform, cfg: SpectralConfig) -> MelSpectrogram:
    mag = np.abs(stft(w, cfg))
    return MelSpectrogram(np.log1p(mel_filterbank(cfg) @ mag), cfg)


def linear_mag_to_mel(mag: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    return np.log1p(mel_filterbank(cfg) @ mag)


def mel_to_linear_mag(values: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Pseudo-inverse mapping from log-mel back to linear magnitudes."""
    m = np.expm1(np.maximum(values, 0.0))
    return np.maximum(_filterbank_pinv(cfg) @ m, 0.0)


def griffin_lim(mag: np.ndarray, cfg: SpectralConfig, iters: int | None = None) -> Waveform:
    iters = cfg.griffin_lim_iters if iters is None else iters
    spec = mag.astype(np.complex128)
    for _ in range(iters):
        w = istft(spec, cfg)
        if len(w.samples) < cfg.fft_size:
            break
        phase = np.angle(stft(w, cfg))
        phase = phase[:, :mag.shape[1]]
        spec = mag[:, :phase.shape[1]] * np.exp(1j * phase)
    return istft(spec, cfg)


def mel_to_wav(m: MelSpectrogram, phase_hint: np.ndarray | None = None) -> Waveform:
    """Invert a log-mel spectrogram.  With a phase hint (complex STFT of the
    source signal) inversion keeps that phase; otherwise Griffin-Lim runs."""
    cfg = m.config
    mag = mel_to_linear_mag(m.values, cfg)
    if phase_hint is not None:
        if phase_hint.shape != mag.shape:
            raise ValueError(
                f"phase hint shape {phase_hint.shape} does not match magnitudes {mag.shape}"
            )
        return istft(mag * np.exp(1j * np.angle(phase_hint)), cfg)
    return griffin_lim(mag, cfg)


@lru_cache(maxsize=16)
def mel_gain_interp(cfg: SpectralConfig):
    """(C, uncovered): C (n_bins, n_mels) interpolates per-mel gains onto FFT
    bins by normalized filter weight; `uncovered` marks bins no filter touches
    (they keep gain 1)."""
    fb = mel_filterbank(cfg)
    col = fb.sum(axis=0)
    uncovered = col <= 0
    denom = np.where(uncovered, 1.0, col)
    return (fb / denom).T, uncovered


def gain_field(delta: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Per-FFT-bin linear gain realizing a log-mel perturbation: a log-domain
    delta is energy scaling, so injection is a time-varying mel-band equalizer
    applied at the signal's own phase.  Silent cells cannot be changed, which
    the attack loss models through the same operator."""
    c, uncovered = mel_gain_interp(cfg)
    g = c @ np.exp(delta)
    g[uncovered] = 1.0
    return g


def realized_mel(mag: np.ndarray, delta: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Log-mel actually observed after injecting `delta` through the gain
    renderer (numpy mirror of the differentiable attack path).  `mag` is the
    clean linear-magnitude spectrogram."""
    return np.log1p(mel_filterbank(cfg) @ (mag * gain_field(delta, cfg)))


def inject_mel_delta(w: Waveform, delta: np.ndarray, cfg: SpectralConfig,
                     start_frame: int = 0) -> Waveform:
    """Protected audio via the offline (non-causal) renderer: per-frame gain
    field applied to the signal's own spectrum, overlap-added back."""
    spec = stft(w, cfg)
    n_frames = spec.shape[1]
    full = np.zeros((cfg.n_mels, n_frames))
    f = min(delta.shape[1], n_frames - start_frame)
    if f <= 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    full[:, start_frame:start_frame + f] = delta[:, :f]
    pert = istft(spec * (gain_field(full, cfg) - 1.0), cfg, length=len(w.samples))
    return Waveform(np.clip(w.samples + pert.samples, -1.0, 1.0), w.sample_rate)


def band_partition(cfg: SpectralConfig, low_edge: float = 1600.0, high_edge: float = 4000.0):
    """Partition mel bin indices into (low, mid, high) by filter center
    frequency; intervals are left-closed, so a center exactly on an edge
    belongs to the higher band."""
    if not (0.0 < low_edge < high_edge < cfg.fmax):
        raise BandEdgeError(
            f"need 0 < low_edge < high_edge < fmax, got {low_edge}, {high_edge}, {cfg.fmax}"
        )
    centers = mel_center_freqs(cfg)
    low = np.where(centers < low_edge)[0]
    mid = np.where((centers >= low_edge) & (centers < high_edge))[0]
    high = np.where(centers >= high_edge)[0]
    return low, mid, high


# ---------------------------------------------------------------------------
# WAV file I/O: RIFF PCM, mono, 16-bit little-endian


def read_wav(path, target_rate: int | None = None) -> Waveform:
    import wave

    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: only mono WAV is supported")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM is supported")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if target_rate is not None and rate != target_rate:
        n_out = int(round(len(samples) * target_rate / rate))
        t_in = np.arange(len(samples)) / rate
        t_out = np.arange(n_out) / target_rate
        samples = np.interp(t_out, t_in, samples)
        rate = target_rate
    return Waveform(samples, rate)


def write_wav(path, w: Waveform):
    import wave

    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
