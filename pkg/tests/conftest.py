"""Shared fixtures: a small deterministic corpus and lightly trained encoders,
built once per session so unit tests across modules stay fast."""

import numpy as np
import pytest

from speechcloak import corpus as cp
from speechcloak import encoder as en
from speechcloak.spectral import SpectralConfig, read_wav, wav_to_mel

MINI_SPEAKERS = 6
MINI_CLIPS = 10
MINI_TRAIN_CLIPS = 8


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini_corpus")
    speakers, records = cp.gen_toy_corpus(
        root, n_speakers=MINI_SPEAKERS, clips_per_speaker=MINI_CLIPS, seed=7,
        min_duration=3.0, max_duration=5.0,
    )
    return {"dir": root, "speakers": speakers, "records": records}


@pytest.fixture(scope="session")
def spectral_cfg():
    return SpectralConfig()


@pytest.fixture(scope="session")
def mini_mels(mini_corpus, spectral_cfg):
    mels = []
    for rec in mini_corpus["records"]:
        w = read_wav(mini_corpus["dir"] / rec.path)
        mels.append(wav_to_mel(w, spectral_cfg).values)
    return mels


@pytest.fixture(scope="session")
def mini_split(mini_corpus):
    records = mini_corpus["records"]
    train = [i for i, r in enumerate(records) if r.clip_index < MINI_TRAIN_CLIPS]
    hold = [i for i, r in enumerate(records) if r.clip_index >= MINI_TRAIN_CLIPS]
    return train, hold


@pytest.fixture(scope="session")
def mini_encoder(mini_corpus, mini_mels, mini_split, spectral_cfg):
    records = mini_corpus["records"]
    train, hold = mini_split
    cfg = en.encoder_config_for(spectral_cfg, n_classes=MINI_SPEAKERS)
    enc, report = en.train_encoder(
        [mini_mels[i] for i in train], [records[i].speaker_id for i in train],
        [mini_mels[i] for i in hold], [records[i].speaker_id for i in hold],
        cfg, seed=11, epochs=3, batch_size=16, steps_per_epoch=40,
    )
    return enc, report


@pytest.fixture(scope="session")
def mini_embeddings(mini_encoder, mini_mels):
    enc, _ = mini_encoder
    return np.stack([enc.embed(m) for m in mini_mels])
