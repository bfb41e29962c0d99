"""Spectral transform properties: exact reconstruction, filterbank geometry,
band partitioning, and WAV round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speechcloak import spectral as sp
from speechcloak.spectral import (BandEdgeError, InputTooShortError, MelSpectrogram,
                                  SpectralConfig, Waveform)

CFG = SpectralConfig()


def sine(freq, seconds=1.0, sr=16000, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def noise_clip(seed, seconds=1.0, sr=16000):
    rng = np.random.default_rng(seed)
    return Waveform(rng.uniform(-0.5, 0.5, int(seconds * sr)), sr)


def interior_snr_db(original, rebuilt, edge):
    a = original[edge:-edge]
    b = rebuilt[edge:len(original) - edge]
    err = a - b
    return 10 * np.log10(np.sum(a ** 2) / max(np.sum(err ** 2), 1e-300))


def test_zero_waveform_gives_zero_stft():
    # frame count follows floor((len - fft_size)/hop) + 1 = 97 for one second
    w = Waveform(np.zeros(16000))
    spec = sp.stft(w, CFG)
    assert spec.shape == (257, 97)
    assert np.all(spec == 0)


def test_sine_peaks_at_expected_fft_bin():
    # 1 kHz at 16 kHz with a 512 FFT lands on bin 1000*512/16000 = 32
    spec = np.abs(sp.stft(sine(1000.0), CFG))
    assert np.all(np.argmax(spec, axis=0) == 32)


def test_stft_linearity():
    w = noise_clip(0)
    half = Waveform(0.5 * w.samples, w.sample_rate)
    np.testing.assert_allclose(np.abs(sp.stft(half, CFG)),
                               0.5 * np.abs(sp.stft(w, CFG)), atol=1e-6)


def test_stft_rejects_short_input():
    with pytest.raises(InputTooShortError):
        sp.stft(Waveform(np.zeros(CFG.fft_size - 1)), CFG)


def test_istft_shape_check():
    with pytest.raises(ValueError):
        sp.istft(np.zeros((100, 5), dtype=complex), CFG)


def test_roundtrip_snr_on_noise():
    w = noise_clip(1)
    back = sp.istft(sp.stft(w, CFG), CFG)
    assert interior_snr_db(w.samples, back.samples, CFG.fft_size) > 40


def test_roundtrip_snr_over_100_random_clips():
    worst = np.inf
    for seed in range(100):
        w = noise_clip(seed, seconds=0.3)
        back = sp.istft(sp.stft(w, CFG), CFG)
        worst = min(worst, interior_snr_db(w.samples, back.samples, CFG.fft_size))
    assert worst > 40, f"worst interior SNR {worst:.1f} dB"


def test_istft_zero_matrix_gives_silence():
    out = sp.istft(np.zeros((257, 20), dtype=complex), CFG)
    assert np.all(out.samples == 0)


def test_roundtrip_preserves_sine_frequency():
    w = sine(1000.0)
    back = sp.istft(sp.stft(w, CFG), CFG)
    spec = np.abs(np.fft.rfft(back.samples[CFG.fft_size:-CFG.fft_size]))
    freqs = np.fft.rfftfreq(len(back.samples) - 2 * CFG.fft_size, 1 / 16000)
    peak = freqs[np.argmax(spec)]
    assert abs(peak - 1000.0) < 16000 / CFG.fft_size  # within one bin


def test_hz_to_mel_closed_form():
    assert abs(sp.hz_to_mel(700.0) - 2595 * np.log10(2)) < 1e-9
    assert abs(sp.hz_to_mel(700.0) - 781.17) < 0.01


def test_mel_of_zero_waveform_is_zero():
    m = sp.wav_to_mel(Waveform(np.zeros(16000)), CFG)
    assert np.all(m.values == 0)  # log(1 + 0)


def test_mel_peak_tracks_1khz():
    m = sp.wav_to_mel(sine(1000.0), CFG)
    centers = sp.mel_center_freqs(CFG)
    expected_bin = int(np.argmin(np.abs(centers - 1000.0)))
    got = np.argmax(m.values, axis=0)
    assert np.all(np.abs(got - expected_bin) <= 1)


def test_filterbank_geometry():
    fb = sp.mel_filterbank(CFG)
    centers = sp.mel_center_freqs(CFG)
    assert fb.shape == (80, 257)
    assert np.all(np.diff(centers) > 0)
    bin_freqs = np.arange(257) * CFG.sample_rate / CFG.fft_size
    inside = (bin_freqs > centers[0]) & (bin_freqs < CFG.fmax)
    assert np.all(fb[:, inside].sum(axis=0) > 0)
    assert np.all(fb.sum(axis=1) > 0)  # no empty filter


def test_mel_roundtrip_with_phase_hint():
    w = noise_clip(2, seconds=2.0)
    phase = sp.stft(w, CFG)
    m = sp.wav_to_mel(w, CFG)
    back = sp.mel_to_wav(m, phase_hint=phase)
    m2 = sp.wav_to_mel(Waveform(back.samples[:len(w.samples)]), CFG)
    n = min(m.n_frames, m2.n_frames)
    rel = np.linalg.norm(m.values[:, :n] - m2.values[:, :n]) / np.linalg.norm(m.values[:, :n])
    assert rel < 0.1, f"relative mel error {rel:.3f}"


def test_mel_to_wav_zero_is_silent():
    m = MelSpectrogram(np.zeros((80, 30)), CFG)
    out = sp.mel_to_wav(m)
    assert np.max(np.abs(out.samples)) < 1e-9


def test_griffin_lim_keeps_sine_in_band():
    w = sine(1000.0, seconds=1.5)
    m = sp.wav_to_mel(w, CFG)
    rebuilt = sp.mel_to_wav(m)  # no phase hint: Griffin-Lim path
    m2 = sp.wav_to_mel(rebuilt, CFG)
    centers = sp.mel_center_freqs(CFG)
    want = int(np.argmin(np.abs(centers - 1000.0)))
    got = int(np.median(np.argmax(m2.values, axis=0)))
    assert abs(got - want) <= 1


def test_cola_constancy_at_quarter_hop():
    # Hann is constant-overlap-add (also squared) at hop = fft/4
    acc = sp._ola_sq_window(512, 128)
    assert acc.max() - acc.min() < 1e-6


def test_default_hop_has_positive_overlap_floor():
    # exactness of istft needs a strictly positive overlap-added window energy
    acc = sp._ola_sq_window(CFG.fft_size, CFG.hop)
    assert acc.min() > 1e-3


def test_config_rejects_gap_inducing_hop():
    with pytest.raises(ValueError):
        SpectralConfig(fft_size=512, hop=512)


def test_band_partition_covers_all_bins():
    low, mid, high = sp.band_partition(CFG)
    assert len(low) + len(mid) + len(high) == 80
    together = np.sort(np.concatenate([low, mid, high]))
    np.testing.assert_array_equal(together, np.arange(80))


def test_band_partition_assignments():
    low, mid, high = sp.band_partition(CFG)
    centers = sp.mel_center_freqs(CFG)
    two_khz = int(np.argmin(np.abs(centers - 2000.0)))
    assert two_khz in mid
    assert np.all(centers[low] < 1600)
    assert np.all((centers[mid] >= 1600) & (centers[mid] < 4000))
    assert np.all(centers[high] >= 4000)


def test_band_edge_tie_breaks_upward():
    # a filter center exactly on the edge belongs to the higher band
    centers = sp.mel_center_freqs(CFG)
    low, mid, high = sp.band_partition(CFG, low_edge=float(centers[30]),
                                       high_edge=float(centers[60]))
    assert 30 in mid
    assert 60 in high


def test_band_partition_rejects_bad_edges():
    with pytest.raises(BandEdgeError):
        sp.band_partition(CFG, low_edge=4000.0, high_edge=1600.0)


@given(st.integers(1, 75), st.integers(76, 79))
@settings(max_examples=20, deadline=None)
def test_band_partition_is_partition_for_random_edges(i, j):
    centers = sp.mel_center_freqs(CFG)
    low, mid, high = sp.band_partition(CFG, float(centers[i]) + 0.5, float(centers[j]) + 0.5)
    assert len(low) + len(mid) + len(high) == 80
    assert len(np.intersect1d(low, mid)) == 0
    assert len(np.intersect1d(mid, high)) == 0


def test_frame_count_formula():
    assert sp.frame_count(16000, CFG) == 97
    assert sp.frames_for_duration(1.25, CFG) == 122
    assert sp.frames_for_duration(0.4, CFG) == 37
    assert sp.frames_for_duration(1.65, CFG) == 162


def test_wav_io_roundtrip(tmp_path):
    w = noise_clip(3, seconds=0.5)
    path = tmp_path / "clip.wav"
    sp.write_wav(path, w)
    back = sp.read_wav(path)
    assert back.sample_rate == 16000
    assert len(back) == len(w)
    assert np.max(np.abs(back.samples - w.samples)) < 1.0 / 32000


def test_wav_load_resamples(tmp_path):
    t = np.arange(8000) / 8000.0
    w = Waveform(0.4 * np.sin(2 * np.pi * 440 * t), 8000)
    path = tmp_path / "low.wav"
    sp.write_wav(path, w)
    up = sp.read_wav(path, target_rate=16000)
    assert up.sample_rate == 16000
    assert abs(len(up) - 16000) <= 2
    spec = np.abs(np.fft.rfft(up.samples))
    freqs = np.fft.rfftfreq(len(up.samples), 1 / 16000)
    assert abs(freqs[np.argmax(spec)] - 440.0) < 4.0


def test_wav_rejects_stereo(tmp_path):
    import wave

    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as f:
        f.setnchannels(2)
        f.setsampwidth(2)
        f.setframerate(16000)
        f.writeframes(b"\x00\x00" * 200)
    with pytest.raises(ValueError, match="mono"):
        sp.read_wav(path)
