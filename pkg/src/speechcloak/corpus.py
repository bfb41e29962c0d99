"""Parametric multi-speaker toy corpus.

Speakers are formant synthesizers: a pitch-pulsed glottal source (with mild
vibrato) drives a cascade of three resonators, shaped by a per-speaker
spectral tilt, plus a -30 dB noise floor.  Utterances are sequences of
vowel-like segments whose formant targets scale the speaker's base formants,
so content varies while identity stays fixed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .spectral import Waveform, write_wav

PITCH_LOW = 90.0
PITCH_HIGH = 260.0
PITCH_CLASS_EDGE = 160.0   # below: "low" pitch class, at/above: "high"
NOISE_FLOOR_DB = -30.0

# vowel inventory: multipliers applied to the speaker's base (F1, F2, F3)
VOWELS = {
    "aa": (1.30, 0.90, 1.00),
    "iy": (0.60, 1.40, 1.08),
    "uw": (0.62, 0.78, 0.96),
    "eh": (0.95, 1.18, 1.04),
    "ow": (1.00, 0.85, 0.98),
}
VOWEL_IDS = sorted(VOWELS)


@dataclass(frozen=True)
class ToySpeakerSpec:
    speaker_id: int
    pitch_hz: float
    formants_hz: tuple          # (F1, F2, F3)
    bandwidths_hz: tuple        # matching resonator bandwidths
    vibrato_rate_hz: float
    vibrato_depth: float        # fractional pitch excursion
    tilt_db_per_octave: float

    @property
    def pitch_class(self):
        return "low" if self.pitch_hz < PITCH_CLASS_EDGE else "high"


@dataclass(frozen=True)
class UtteranceSpec:
    segments: tuple             # ((vowel_id, seconds), ...)
    # per-clip deviations from the speaker's base parameters; real voices vary
    # between takes, and verifier margins should reflect that
    pitch_scale: float = 1.0
    formant_scales: tuple = (1.0, 1.0, 1.0)
    tilt_shift_db: float = 0.0

    @property
    def duration(self):
        return sum(d for _, d in self.segments)


class CorpusError(ValueError):
    pass


def sample_speakers(n_speakers: int, rng: np.random.Generator):
    """Deterministic speaker set; any two speakers differ by >= 10 Hz in pitch
    or >= 50 Hz in first formant."""
    if n_speakers < 4:
        raise CorpusError("need at least 4 speakers")
    speakers = []
    span = PITCH_HIGH - PITCH_LOW
    for i in range(n_speakers):
        pitch = PITCH_LOW + span * i / (n_speakers - 1) + rng.uniform(-4.0, 4.0)
        pitch = float(np.clip(pitch, PITCH_LOW, PITCH_HIGH))
        # stagger F1 on a coarse grid so near-pitch neighbours stay separable
        f1 = 380.0 + ((3 * i) % 8) * 65.0 + rng.uniform(-20.0, 20.0)
        f2 = f1 + 820.0 + rng.uniform(-120.0, 120.0)
        f3 = 2500.0 + rng.uniform(-180.0, 180.0)
        speakers.append(ToySpeakerSpec(
            speaker_id=i,
            pitch_hz=pitch,
            formants_hz=(round(f1, 2), round(f2, 2), round(f3, 2)),
            bandwidths_hz=(
                round(rng.uniform(60.0, 90.0), 2),
                round(rng.uniform(80.0, 120.0), 2),
                round(rng.uniform(120.0, 180.0), 2),
            ),
            vibrato_rate_hz=round(rng.uniform(4.5, 6.5), 3),
            vibrato_depth=round(rng.uniform(0.002, 0.005), 5),
            tilt_db_per_octave=round(rng.uniform(-9.0, -3.0), 2),
        ))
    return speakers


def sample_utterance(rng: np.random.Generator, min_duration=3.0, max_duration=8.0,
                     variability=1.0):
    total = rng.uniform(min_duration, max_duration)
    segments = []
    left = total
    while left > 0.0:
        d = min(float(rng.uniform(0.15, 0.45)), left)
        if left - d < 0.12:
            d = left
        segments.append((VOWEL_IDS[int(rng.integers(len(VOWEL_IDS)))], round(d, 4)))
        left = round(left - d, 6)
    return UtteranceSpec(
        tuple(segments),
        pitch_scale=round(float(np.clip(1.0 + variability * rng.normal(0, 0.035),
                                        0.92, 1.08)), 5),
        formant_scales=tuple(round(float(np.clip(1.0 + variability * rng.normal(0, 0.05),
                                                 0.87, 1.13)), 5) for _ in range(3)),
        tilt_shift_db=round(float(variability * rng.uniform(-1.5, 1.5)), 3),
    )


def _resonator_coeffs(freq, bw, sr):
    r = np.exp(-np.pi * bw / sr)
    theta = 2.0 * np.pi * freq / sr
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    return [1.0 - r], a


def synthesize(spk: ToySpeakerSpec, utt: UtteranceSpec, sample_rate=16000,
               noise_rng: np.random.Generator | None = None) -> Waveform:
    sr = sample_rate
    n = int(round(utt.duration * sr))
    t = np.arange(n) / sr
    f0 = (spk.pitch_hz * utt.pitch_scale
          * (1.0 + spk.vibrato_depth * np.sin(2 * np.pi * spk.vibrato_rate_hz * t)))
    phase = np.cumsum(f0) / sr
    # impulse-ish glottal source at the pitch period
    source = np.zeros(n)
    source[np.diff(np.floor(phase), prepend=0.0) > 0] = 1.0
    # spectral tilt via a one-pole lowpass whose strength follows dB/octave
    tilt = spk.tilt_db_per_octave + utt.tilt_shift_db
    alpha = float(np.clip(-tilt / 12.0, 0.05, 0.95))
    source = lfilter([1.0 - alpha], [1.0, -alpha], source)

    out = np.zeros(n)
    pos = 0
    for vowel, dur in utt.segments:
        seg_n = min(int(round(dur * sr)), n - pos)
        if seg_n <= 0:
            break
        scales = VOWELS[vowel]
        seg = source[pos:pos + seg_n]
        for base, vscale, cscale, bw in zip(spk.formants_hz, scales,
                                            utt.formant_scales, spk.bandwidths_hz):
            b, a = _resonator_coeffs(base * vscale * cscale, bw, sr)
            seg = lfilter(b, a, seg)
        out[pos:pos + seg_n] = seg
        pos += seg_n

    # reinforce the first harmonic so the source has a dominant fundamental
    rms = np.sqrt(np.mean(out ** 2))
    out = out + (1.1 * np.sqrt(2.0) * rms) * np.sin(2 * np.pi * phase)

    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    rms = np.sqrt(np.mean(out ** 2))
    if noise_rng is not None and rms > 0:
        out = out + (rms * 10 ** (NOISE_FLOOR_DB / 20.0)) * noise_rng.standard_normal(n)
    return Waveform(np.clip(out, -1.0, 1.0), sr)


@dataclass
class ClipRecord:
    path: str
    speaker_id: int
    clip_index: int
    duration: float
    pitch_hz: float             # effective per-clip value (base x clip scale)
    formants_hz: tuple
    segments: tuple
    pitch_scale: float = 1.0
    formant_scales: tuple = (1.0, 1.0, 1.0)
    tilt_shift_db: float = 0.0

    def utterance(self):
        return UtteranceSpec(tuple((v, d) for v, d in self.segments),
                             pitch_scale=self.pitch_scale,
                             formant_scales=tuple(self.formant_scales),
                             tilt_shift_db=self.tilt_shift_db)


def gen_toy_corpus(out_dir, n_speakers=20, clips_per_speaker=40, seed=7,
                   sample_rate=16000, min_duration=3.0, max_duration=8.0,
                   variability=1.0):
    """Write WAVs plus a JSON-lines manifest; fully determined by the seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    speakers = sample_speakers(n_speakers, rng)
    records = []
    for spk in speakers:
        for c in range(clips_per_speaker):
            utt = sample_utterance(rng, min_duration, max_duration, variability)
            noise_rng = np.random.default_rng(seed * 1_000_003 + spk.speaker_id * 1009 + c)
            wave = synthesize(spk, utt, sample_rate, noise_rng)
            rel = f"spk{spk.speaker_id:03d}_clip{c:03d}.wav"
            write_wav(out_dir / rel, wave)
            records.append(ClipRecord(
                path=rel, speaker_id=spk.speaker_id, clip_index=c,
                duration=round(len(wave) / sample_rate, 6),
                pitch_hz=round(spk.pitch_hz * utt.pitch_scale, 4),
                formants_hz=tuple(round(f * s, 4) for f, s in
                                  zip(spk.formants_hz, utt.formant_scales)),
                segments=utt.segments,
                pitch_scale=utt.pitch_scale,
                formant_scales=utt.formant_scales,
                tilt_shift_db=utt.tilt_shift_db,
            ))
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as f:
        for spk in speakers:
            f.write(json.dumps({"kind": "speaker", **asdict(spk)}) + "\n")
        for rec in records:
            f.write(json.dumps({"kind": "clip", **asdict(rec)}) + "\n")
    return speakers, records


def load_corpus(corpus_dir):
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / "manifest.jsonl"
    if not manifest.exists():
        raise CorpusError(f"no manifest at {manifest}")
    speakers, records = [], []
    with open(manifest, "r", encoding="utf-8") as f:
        for line in f:
            row = json.loads(line)
            kind = row.pop("kind")
            if kind == "speaker":
                row["formants_hz"] = tuple(row["formants_hz"])
                row["bandwidths_hz"] = tuple(row["bandwidths_hz"])
                speakers.append(ToySpeakerSpec(**row))
            else:
                row["formants_hz"] = tuple(row["formants_hz"])
                row["segments"] = tuple((v, d) for v, d in row["segments"])
                row["formant_scales"] = tuple(row["formant_scales"])
                records.append(ClipRecord(**row))
    return speakers, records


def speaker_separation_ok(speakers, min_pitch_gap=10.0, min_f1_gap=50.0):
    for i, a in enumerate(speakers):
        for b in speakers[i + 1:]:
            if (abs(a.pitch_hz - b.pitch_hz) < min_pitch_gap
                    and abs(a.formants_hz[0] - b.formants_hz[0]) < min_f1_gap):
                return False
    return True
