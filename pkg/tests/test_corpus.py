"""Toy corpus generation: determinism, pitch fidelity, separation invariant."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from speechcloak import corpus as cp
from speechcloak.spectral import read_wav


def dominant_pitch(samples, sr, lo=60.0, hi=350.0):
    """Independent oracle: parabolic-interpolated FFT peak in the pitch range."""
    spec = np.abs(np.fft.rfft(samples))
    freqs = np.fft.rfftfreq(len(samples), 1 / sr)
    band = (freqs >= lo) & (freqs <= hi)
    idx = np.flatnonzero(band)
    k = idx[np.argmax(spec[idx])]
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
        return (k + shift) * sr / len(samples)
    return freqs[k]


def _dir_digest(path):
    h = hashlib.sha256()
    for p in sorted(Path(path).glob("*.wav")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def test_corpus_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cp.gen_toy_corpus(a, n_speakers=4, clips_per_speaker=2, seed=7)
    cp.gen_toy_corpus(b, n_speakers=4, clips_per_speaker=2, seed=7)
    assert _dir_digest(a) == _dir_digest(b)
    assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()


def test_corpus_counts_and_durations(tmp_path):
    speakers, records = cp.gen_toy_corpus(tmp_path, n_speakers=5, clips_per_speaker=4, seed=3)
    assert len(records) == 20
    assert len(list(tmp_path.glob("*.wav"))) == 20
    for rec in records:
        assert rec.duration >= 3.0
        w = read_wav(tmp_path / rec.path)
        assert len(w) >= 3 * 16000


def test_clip_fundamental_matches_recorded_pitch(tmp_path):
    # manifest records the per-clip effective pitch (base x clip deviation)
    speakers, records = cp.gen_toy_corpus(tmp_path, n_speakers=4, clips_per_speaker=2, seed=11)
    for rec in records:
        w = read_wav(tmp_path / rec.path)
        got = dominant_pitch(w.samples, 16000)
        assert abs(got - rec.pitch_hz) < 2.0, (
            f"speaker {rec.speaker_id}: expected {rec.pitch_hz}, got {got:.2f}"
        )


def test_speaker_separation_invariant():
    for seed in (0, 1, 7, 23):
        speakers = cp.sample_speakers(20, np.random.default_rng(seed))
        assert cp.speaker_separation_ok(speakers)
        pitches = [s.pitch_hz for s in speakers]
        assert min(pitches) >= cp.PITCH_LOW and max(pitches) <= cp.PITCH_HIGH
        classes = {s.pitch_class for s in speakers}
        assert classes == {"low", "high"}


def test_rejects_tiny_corpus():
    with pytest.raises(cp.CorpusError):
        cp.sample_speakers(3, np.random.default_rng(0))


def test_manifest_roundtrip(tmp_path):
    speakers, records = cp.gen_toy_corpus(tmp_path, n_speakers=4, clips_per_speaker=2, seed=5)
    s2, r2 = cp.load_corpus(tmp_path)
    assert s2 == speakers
    assert r2 == records
    assert r2[0].utterance().duration == pytest.approx(records[0].duration, abs=1e-3)


def test_utterance_durations_in_range():
    rng = np.random.default_rng(9)
    for _ in range(50):
        utt = cp.sample_utterance(rng, 3.0, 8.0)
        assert 3.0 <= utt.duration <= 8.0
        assert all(d > 0 for _, d in utt.segments)
