"""Single structured run configuration shared by every pipeline stage.

All stages read timing/spectral/attack constants from one document so they
cannot drift apart.  Defaults follow the reference operating point: 1.25 s
input window, 0.4 s prediction delay and chunk length (1.65 s header),
amplitude budget 0.10 of the corpus log-mel dynamic range with band
multipliers 1.15 / 0.85 / 1.00 around the 1.6-4 kHz hearing-sensitive band,
verification threshold 0.25, offline attack budget 1500 iterations, and
baseline amplitudes 0.15 (random noise) / 0.12 (periodic header).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .spectral import SpectralConfig


class ConfigError(ValueError):
    pass


@dataclass
class CorpusSection:
    n_speakers: int = 20
    clips_per_speaker: int = 40
    train_clips_per_speaker: int = 30
    min_duration: float = 3.0   # clips shorter than this are never generated
    max_duration: float = 8.0
    seed: int = 7

    def validate(self):
        if self.n_speakers < 4:
            raise ConfigError("corpus.n_speakers must be >= 4")
        if not (3.0 <= self.min_duration <= self.max_duration):
            raise ConfigError("corpus durations must satisfy 3 <= min <= max")
        if not (1 <= self.train_clips_per_speaker < self.clips_per_speaker):
            raise ConfigError("corpus.train_clips_per_speaker must leave held-out clips")


@dataclass
class SpectralSection:
    sample_rate: int = 16000
    fft_size: int = 512
    hop: int = 160              # 10 ms at 16 kHz
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    griffin_lim_iters: int = 32

    def to_spectral_config(self) -> SpectralConfig:
        return SpectralConfig(
            sample_rate=self.sample_rate, fft_size=self.fft_size, hop=self.hop,
            n_mels=self.n_mels, fmin=self.fmin, fmax=self.fmax,
            griffin_lim_iters=self.griffin_lim_iters,
        )

    def validate(self):
        self.to_spectral_config()


def default_alt_spectral() -> "SpectralSection":
    # high-resolution front-end for the alternate encoder and the verifier
    return SpectralSection(fft_size=4096, hop=320, n_mels=512)


@dataclass
class EncoderSection:
    embed_dim: int = 64
    window_seconds: float = 1.25     # embedding window; longer inputs mean-pool
    epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 1e-3
    steps_per_epoch: int = 90
    target_seed: int = 11
    alt_seed: int = 13
    verifier_seed: int = 17

    def validate(self):
        if self.embed_dim < 2:
            raise ConfigError("encoder.embed_dim must be >= 2")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("encoder.epochs and batch_size must be positive")


@dataclass
class TimingSection:
    window_seconds: float = 1.25     # predictor input window t
    delay_seconds: float = 0.4       # prediction delay
    chunk_seconds: float = 0.4       # emitted perturbation chunk length

    def validate(self):
        if abs(self.delay_seconds - self.chunk_seconds) > 1e-9:
            raise ConfigError("timing.delay_seconds must equal chunk_seconds (gapless coverage)")
        if self.window_seconds <= 0 or self.chunk_seconds <= 0:
            raise ConfigError("timing values must be positive")

    @property
    def header_seconds(self) -> float:
        return self.window_seconds + self.delay_seconds


@dataclass
class AttackSection:
    lam: float = 1.0                 # weight on the push-away-from-victim term
    epsilon: float = 0.10            # fraction of corpus log-mel dynamic range
    iterations: int = 1500           # offline per-clip attack
    header_iterations: int = 500
    header_batch: int = 8
    step_size_fraction: float = 25.0  # step = fraction * eps / iterations
    seed: int = 23

    def validate(self):
        if self.epsilon < 0:
            raise ConfigError("attack.epsilon must be >= 0")
        if self.iterations < 1 or self.header_iterations < 1:
            raise ConfigError("attack iteration counts must be >= 1")
        if self.lam < 0:
            raise ConfigError("attack.lam must be >= 0")


@dataclass
class BandSection:
    low_edge_hz: float = 1600.0
    high_edge_hz: float = 4000.0
    low_mult: float = 1.15
    mid_mult: float = 0.85
    high_mult: float = 1.00

    def validate(self):
        if not (0 < self.low_edge_hz < self.high_edge_hz):
            raise ConfigError("band edges must satisfy 0 < low < high")
        if not (self.mid_mult < self.high_mult < self.low_mult):
            raise ConfigError("band multipliers must satisfy mid < high < low")


@dataclass
class PredictorSection:
    channel_cap: int = 128
    epochs: int = 8
    learning_rate: float = 1e-3
    seed: int = 31

    def validate(self):
        if self.channel_cap < 8:
            raise ConfigError("predictor.channel_cap must be >= 8")
        if self.epochs < 1:
            raise ConfigError("predictor.epochs must be >= 1")


@dataclass
class ProtectSection:
    noise_epsilon: float = 0.15      # uniform mel-noise baseline amplitude
    periodic_epsilon: float = 0.12   # tiled-header baseline amplitude
    noise_seed: int = 41

    def validate(self):
        if self.noise_epsilon < 0 or self.periodic_epsilon < 0:
            raise ConfigError("protect amplitudes must be >= 0")


@dataclass
class EvalSection:
    threshold: float = 0.25          # verification passes on similarity > threshold
    n_eval_clips: int = 10
    vc_ridge_alpha: float = 1e-3
    seed: int = 47

    def validate(self):
        if not (-1.0 <= self.threshold <= 1.0):
            raise ConfigError("eval.threshold must be within [-1, 1]")
        if self.n_eval_clips < 1:
            raise ConfigError("eval.n_eval_clips must be >= 1")


@dataclass
class RunConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    spectral: SpectralSection = field(default_factory=SpectralSection)
    alt_spectral: SpectralSection = field(default_factory=default_alt_spectral)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    timing: TimingSection = field(default_factory=TimingSection)
    attack: AttackSection = field(default_factory=AttackSection)
    bands: BandSection = field(default_factory=BandSection)
    predictor: PredictorSection = field(default_factory=PredictorSection)
    protect: ProtectSection = field(default_factory=ProtectSection)
    eval: EvalSection = field(default_factory=EvalSection)
    victim_speaker: int = -1         # -1: pick the lowest-pitch speaker

    def validate(self):
        for section in (self.corpus, self.spectral, self.alt_spectral, self.encoder,
                        self.timing, self.attack, self.bands, self.predictor,
                        self.protect, self.eval):
            section.validate()
        return self


_SECTION_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _from_dict(cls, data: dict, path: str):
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(field_map)
    if unknown:
        raise ConfigError(f"unknown key(s) under '{path}': {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = field_map[name]
        if dataclasses.is_dataclass(f.type) and isinstance(value, dict):
            kwargs[name] = _from_dict(f.type, value, f"{path}.{name}" if path else name)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _from_dict(RunConfig, data, "")
    return cfg.validate()


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return config_from_dict(data)


def save_config(path, cfg: RunConfig):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def _coerce(text: str, current):
    if isinstance(current, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    return text


def apply_override(cfg: RunConfig, dotted: str):
    """Apply one --set key=value override, e.g. attack.epsilon=0.05."""
    if "=" not in dotted:
        raise ConfigError(f"override must look like section.key=value, got {dotted!r}")
    key, _, value = dotted.partition("=")
    parts = key.strip().split(".")
    obj = cfg
    for part in parts[:-1]:
        if not hasattr(obj, part):
            raise ConfigError(f"unknown config section {part!r} in {key!r}")
        obj = getattr(obj, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(obj) or leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(obj, leaf, _coerce(value.strip(), getattr(obj, leaf)))
    return cfg
