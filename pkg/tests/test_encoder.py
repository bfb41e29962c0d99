"""Speaker encoder behaviour on the mini corpus fixture."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speechcloak import autodiff as ad
from speechcloak import encoder as en
from speechcloak.encoder import (EmptyPoolError, SpeakerEncoder, TooShortInputError,
                                 select_target_speaker, similarity, verify)


def test_training_reduces_loss_and_separates(mini_encoder):
    enc, report = mini_encoder
    assert report.entries[-1].train_loss < report.entries[0].train_loss
    assert report.holdout_accuracy >= 0.9
    assert report.same_mean - report.diff_mean >= 0.3


def test_embedding_is_unit_norm(mini_encoder, mini_mels):
    enc, _ = mini_encoder
    for m in mini_mels[:5]:
        e = enc.embed(m)
        assert abs(np.linalg.norm(e) - 1.0) < 1e-6


def test_embed_same_input_cosine_one(mini_encoder, mini_mels):
    enc, _ = mini_encoder
    a = enc.embed(mini_mels[0])
    b = enc.embed(mini_mels[0])
    assert similarity(a, b) == pytest.approx(1.0, abs=1e-9)


def test_zero_mel_gives_valid_unit_vector(mini_encoder):
    enc, _ = mini_encoder
    e = enc.embed(np.zeros((80, enc.cfg.window_frames)))
    assert np.all(np.isfinite(e))
    assert abs(np.linalg.norm(e) - 1.0) < 1e-6


def test_embed_rejects_short_input(mini_encoder):
    enc, _ = mini_encoder
    with pytest.raises(TooShortInputError):
        enc.embed(np.zeros((80, enc.cfg.window_frames - 1)))


def test_same_speaker_triples_beat_different(mini_encoder, mini_corpus, mini_embeddings):
    enc, _ = mini_encoder
    records = mini_corpus["records"]
    labels = np.asarray([r.speaker_id for r in records])
    emb = mini_embeddings
    rng = np.random.default_rng(0)
    wins = 0
    trials = 200
    for _ in range(trials):
        a = int(rng.integers(len(labels)))
        same_pool = np.flatnonzero((labels == labels[a]) & (np.arange(len(labels)) != a))
        diff_pool = np.flatnonzero(labels != labels[a])
        s = int(rng.choice(same_pool))
        d = int(rng.choice(diff_pool))
        wins += similarity(emb[a], emb[s]) > similarity(emb[a], emb[d])
    assert wins / trials >= 0.9


def test_similarity_relations():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(64)
    a /= np.linalg.norm(a)
    assert similarity(a, a) == pytest.approx(1.0)
    b = np.zeros(64)
    b[np.argmin(np.abs(a))] = 1.0
    b -= (a @ b) * a
    b /= np.linalg.norm(b)
    assert abs(similarity(a, b)) < 1e-9


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_similarity_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(16)
    b = rng.standard_normal(16)
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    assert similarity(a, b) == pytest.approx(similarity(b, a), abs=1e-12)


def test_verify_threshold_semantics():
    a = np.zeros(4)
    a[0] = 1.0
    # raw-speech-level score passes, protected-level score fails
    b_pass = np.array([0.780, 0.0, 0.0, 0.0])
    b_pass /= np.linalg.norm(b_pass)
    assert verify(a, 0.780 * a + 0.0, k=0.25)
    assert not verify(a, np.array([0.077, np.sqrt(1 - 0.077 ** 2), 0, 0]), k=0.25)
    exact = np.array([0.25, np.sqrt(1 - 0.25 ** 2), 0, 0])
    assert not verify(a, exact, k=0.25)  # strict inequality at the boundary


def test_select_target_prefers_opposite_class_and_max_distance():
    rng = np.random.default_rng(2)
    victim = rng.standard_normal(8)
    victim /= np.linalg.norm(victim)

    def unit(v):
        return v / np.linalg.norm(v)

    candidates = {
        1: (unit(victim + 0.1 * rng.standard_normal(8)), "high"),
        2: (unit(-victim), "high"),
        3: (unit(-victim + 0.01 * rng.standard_normal(8)), "low"),  # same class as victim
    }
    picked = select_target_speaker(victim, "low", candidates)
    assert picked == 2
    # exhaustive check: no other opposite-class candidate is farther
    d2 = 1 - similarity(victim, candidates[2][0])
    d1 = 1 - similarity(victim, candidates[1][0])
    assert d2 >= d1


def test_select_target_single_candidate_pool():
    emb = np.zeros(4)
    emb[0] = 1.0
    assert select_target_speaker(emb, "low", {5: (emb, "low")}) == 5


def test_select_target_empty_pool():
    with pytest.raises(EmptyPoolError):
        select_target_speaker(np.ones(4), "low", {})


def test_select_target_from_trained_embeddings(mini_encoder, mini_corpus, mini_embeddings):
    records = mini_corpus["records"]
    speakers = {s.speaker_id: s for s in mini_corpus["speakers"]}
    labels = np.asarray([r.speaker_id for r in records])
    means = {}
    for sid in sorted(speakers):
        m = mini_embeddings[labels == sid].mean(axis=0)
        means[sid] = m / np.linalg.norm(m)
    victim = 0
    cand = {sid: (means[sid], speakers[sid].pitch_class)
            for sid in sorted(speakers) if sid != victim}
    picked = select_target_speaker(means[victim], speakers[victim].pitch_class, cand)
    assert speakers[picked].pitch_class != speakers[victim].pitch_class
    d_star = 1 - similarity(means[victim], means[picked])
    for sid, (emb, pc) in cand.items():
        if pc != speakers[victim].pitch_class:
            assert d_star >= 1 - similarity(means[victim], emb) - 1e-12


def test_checkpoint_roundtrip_identical_embeddings(tmp_path, mini_encoder, mini_mels):
    enc, _ = mini_encoder
    path = tmp_path / "enc.ckpt"
    enc.save(path, extra_config={"role": "target"})
    loaded, cfg = SpeakerEncoder.load(path)
    assert cfg["role"] == "target"
    # loaded weights are float32-rounded; embeddings must be deterministic
    e1 = loaded.embed(mini_mels[0])
    e2 = loaded.embed(mini_mels[0])
    np.testing.assert_array_equal(e1, e2)
    # and close to the original float64 encoder's output
    e0 = enc.embed(mini_mels[0])
    assert similarity(e0, e1) > 0.999


def test_save_is_bit_deterministic(tmp_path, mini_encoder):
    enc, _ = mini_encoder
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    enc.save(p1)
    enc.save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_same_seed_same_training(mini_corpus, mini_mels, mini_split, spectral_cfg):
    records = mini_corpus["records"]
    train, hold = mini_split
    cfg = en.encoder_config_for(spectral_cfg, n_classes=6)

    def run():
        enc, _ = en.train_encoder(
            [mini_mels[i] for i in train[:12]], [records[i].speaker_id for i in train[:12]],
            [mini_mels[i] for i in hold[:4]], [records[i].speaker_id for i in hold[:4]],
            cfg, seed=5, epochs=1, batch_size=8, steps_per_epoch=6,
        )
        return enc.state_arrays()

    s1, s2 = run(), run()
    for name in s1:
        np.testing.assert_array_equal(s1[name], s2[name])


def test_one_epoch_lowers_loss(mini_corpus, mini_mels, mini_split, spectral_cfg):
    records = mini_corpus["records"]
    train, hold = mini_split
    cfg = en.encoder_config_for(spectral_cfg, n_classes=6)
    enc = en.SpeakerEncoder(cfg, seed=3)
    params = enc.parameters()
    rng = np.random.default_rng(4)
    idx = [train[i] for i in rng.integers(0, len(train), 16)]
    batch = np.stack([mini_mels[i][:, :cfg.window_frames] for i in idx])[:, None]
    labels = np.asarray([records[i].speaker_id for i in idx])

    def loss_value():
        return float(ad.softmax_cross_entropy(
            enc.forward_logits(ad.constant(batch), train=False), labels).data)

    before = loss_value()
    for _ in range(8):
        loss = ad.softmax_cross_entropy(enc.forward_logits(ad.constant(batch), train=True), labels)
        ad.zero_grads(params)
        ad.backward(loss)
        ad.adam_step(params, lr=1e-3)
    assert loss_value() < before


def test_gradients_do_not_flow_through_frozen_encoder(mini_encoder, mini_mels):
    enc, _ = mini_encoder
    enc.set_trainable(False)
    ad.zero_grads(enc.parameters())
    try:
        delta = ad.Parameter(np.zeros_like(mini_mels[0][:, :enc.cfg.window_frames]))
        m = ad.constant(mini_mels[0][:, :enc.cfg.window_frames])
        emb = enc.embed_tensor(ad.add(m, delta))
        loss = ad.mse(emb, ad.constant(np.roll(emb.data, 1)))
        ad.backward(loss)
        assert np.any(delta.grad != 0)
        for p in enc.parameters():
            assert np.all(p.grad == 0)
    finally:
        enc.set_trainable(True)
