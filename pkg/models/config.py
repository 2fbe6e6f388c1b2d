"""
Experiment configuration

An INI-style `key = value` file with one section per concern. Every
field has a default; `dump()` prints the canonical form that the config
hash is computed over.
"""

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import load_dotenv

from .ablation_profiles import AblationConfig
from .errors import ConfigError
from .imaging import PhantomSpec
from .losses import LossWeights
from .networks import DiscriminatorSpec, EncoderSpec
from .superpixel import ProxyMode, ProxyParams, area_scaled_superpixels
from .training import TrainConfig

PHANTOM_SOURCE = "phantom"


@dataclass
class DataSection:
    source: str = PHANTOM_SOURCE
    image_size: int = 64
    n_train_normal: int = 300
    n_test_normal: int = 100
    n_test_abnormal: int = 100
    lesion_radius_min: float = 3.0
    lesion_radius_max: float = 7.0
    lesion_contrast_min: float = 0.12
    lesion_contrast_max: float = 0.24
    noise_sigma: float = 0.02
    phantom_seed: int = 0


@dataclass
class ProxySection:
    mode: str = ProxyMode.SI.value
    n_superpixels: int = 0  # 0: scale 800-at-256² to the working size
    compactness: float = 10.0
    slic_iters: int = 10
    smooth_sigma: float = 2.0
    patch_size: int = 8


@dataclass
class MemorySection:
    k: int = 128
    d: int = 64
    gamma: float = 0.99


@dataclass
class WeightsSection:
    lambda_g: float = 0.01
    lambda_global: float = 0.25
    lambda_local: float = 0.5
    beta_commit: float = 0.25


@dataclass
class TrainSection:
    learning_rate: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    recon_train_input: str = "predicted"
    papc_source: str = "other"
    base_channels: int = 32
    n_downsamples: int = 4
    disc_layers: int = 3


@dataclass
class AblationSection:
    use_si_proxy: bool = True
    use_memory: bool = True
    use_repairing: bool = True
    score_in_latent: bool = True


@dataclass
class OutputSection:
    dir: str = "runs/default"


_SECTIONS = ("data", "proxy", "memory", "weights", "train", "ablation", "output")


def _convert(raw, kind, where):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind.__name__}") from None


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    proxy: ProxySection = field(default_factory=ProxySection)
    memory: MemorySection = field(default_factory=MemorySection)
    weights: WeightsSection = field(default_factory=WeightsSection)
    train: TrainSection = field(default_factory=TrainSection)
    ablation: AblationSection = field(default_factory=AblationSection)
    output: OutputSection = field(default_factory=OutputSection)

    # ----------------------------------------------------------
    # reading / writing
    # ----------------------------------------------------------

    @classmethod
    def from_string(cls, text, origin="<config>"):
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=origin)
        except configparser.Error as e:
            raise ConfigError(f"{origin}: {e}") from None
        config = cls()
        for name in parser.sections():
            if name not in _SECTIONS:
                raise ConfigError(f"{origin}: unknown section [{name}]")
            section = getattr(config, name)
            known = {f.name: f.type for f in fields(section)}
            for key, raw in parser.items(name):
                if key not in known:
                    raise ConfigError(f"{origin}: unknown key '{key}' in [{name}]")
                setattr(section, key, _convert(raw, known[key], f"{origin} [{name}] {key}"))
        return config.validate()

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_string(path.read_text(), origin=str(path))

    def dump(self):
        lines = []
        for name in _SECTIONS:
            lines.append(f"[{name}]")
            section = getattr(self, name)
            for f in fields(section):
                value = getattr(section, f.name)
                if isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, float):
                    value = repr(value)
                lines.append(f"{f.name} = {value}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dump())
        return path

    def config_hash(self):
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()

    def copy(self, **sections):
        """Copy with whole sections replaced, e.g. copy(ablation=AblationSection(...))"""
        clone = ExperimentConfig.from_string(self.dump())
        for name, section in sections.items():
            setattr(clone, name, section)
        return clone.validate()

    # ----------------------------------------------------------
    # validation and typed views
    # ----------------------------------------------------------

    def validate(self):
        try:
            ProxyMode.parse(self.proxy.mode)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.train.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.train.epochs < 1 or self.train.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.train.recon_train_input not in ("predicted", "slic"):
            raise ConfigError("recon_train_input must be 'predicted' or 'slic'")
        if self.train.papc_source not in ("other", "self"):
            raise ConfigError("papc_source must be 'other' or 'self'")
        if self.memory.k < 1 or self.memory.d < 1:
            raise ConfigError("memory k and d must be >= 1")
        if not 0.0 < self.memory.gamma < 1.0:
            raise ConfigError("memory gamma must lie in (0, 1)")
        if self.data.image_size % (2 ** self.train.n_downsamples):
            raise ConfigError(
                f"image_size {self.data.image_size} is not divisible by 2^{self.train.n_downsamples}"
            )
        if self.is_phantom:
            self.phantom_spec().validate()
        self.loss_weights()
        self.ablation_config()
        return self

    @property
    def is_phantom(self):
        return self.data.source == PHANTOM_SOURCE

    def phantom_spec(self):
        d = self.data
        return PhantomSpec(
            image_size=d.image_size,
            n_train_normal=d.n_train_normal,
            n_test_normal=d.n_test_normal,
            n_test_abnormal=d.n_test_abnormal,
            lesion_radius_range=(d.lesion_radius_min, d.lesion_radius_max),
            lesion_contrast_range=(d.lesion_contrast_min, d.lesion_contrast_max),
            noise_sigma=d.noise_sigma,
            seed=d.phantom_seed,
        )

    def proxy_params(self):
        n = self.proxy.n_superpixels or area_scaled_superpixels(self.data.image_size, self.data.image_size)
        return ProxyParams(
            n_superpixels=n,
            compactness=self.proxy.compactness,
            slic_iters=self.proxy.slic_iters,
            smooth_sigma=self.proxy.smooth_sigma,
            patch_size=self.proxy.patch_size,
        )

    def loss_weights(self):
        w = self.weights
        try:
            return LossWeights(w.lambda_g, w.lambda_global, w.lambda_local, w.beta_commit)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def ablation_config(self):
        a = self.ablation
        return AblationConfig(a.use_si_proxy, a.use_memory, a.use_repairing, a.score_in_latent,
                              ProxyMode.parse(self.proxy.mode))

    def encoder_spec(self):
        return EncoderSpec(1, self.train.base_channels, self.train.n_downsamples, self.memory.d)

    def train_config(self, stage="proxy"):
        t = self.train
        return TrainConfig(
            stage=stage,
            epochs=t.epochs,
            batch_size=t.batch_size,
            learning_rate=t.learning_rate,
            seed=t.seed,
            ablation=self.ablation_config(),
            weights=self.loss_weights(),
            betas=(t.beta1, t.beta2),
            encoder=self.encoder_spec(),
            memory_k=self.memory.k,
            memory_gamma=self.memory.gamma,
            discriminator=DiscriminatorSpec(1, t.base_channels, t.disc_layers),
            recon_train_input=t.recon_train_input,
            papc_source=t.papc_source,
        )

    def with_ablation(self, ablation: AblationConfig):
        clone = self.copy(ablation=AblationSection(
            ablation.use_si_proxy, ablation.use_memory, ablation.use_repairing, ablation.score_in_latent,
        ))
        clone.proxy.mode = ablation.proxy_mode.value
        return clone

    def with_output(self, directory):
        return self.copy(output=OutputSection(str(directory)))


def default_config():
    return ExperimentConfig()


def load_environment():
    """Read `.env` (if present) into the process environment"""
    load_dotenv()
    return {
        "threads": int(os.getenv("PROXYAD_THREADS", "0") or 0),
        "log_level": os.getenv("PROXYAD_LOG_LEVEL", "INFO"),
        "checkpoint": os.getenv("PROXYAD_CHECKPOINT", ""),
    }


def override(config: ExperimentConfig, section, key, value):
    """Set one `section.key` from a string, with type conversion"""
    target = getattr(config, section, None)
    if target is None or section not in _SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    known = {f.name: f.type for f in fields(target)}
    if key not in known:
        raise ConfigError(f"unknown key '{key}' in [{section}]")
    clone = config.copy()
    setattr(getattr(clone, section), key, _convert(str(value), known[key], f"[{section}] {key}"))
    return clone.validate()
