"""
The composed detector: F_g ∘ F_p plus scoring, with checkpoint I/O
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .checkpoint import read_checkpoint, section_state, write_checkpoint
from .config import ExperimentConfig
from .errors import ModelStateError
from .imaging import LabeledSample
from .logs import get_logger
from .memory_bank import MemoryBank
from .networks import (DiscriminatorSpec, EncoderSpec, build_discriminator, build_proxy_module,
                       build_recon_module)
from .scoring import (AnomalyRecord, as_batch, reconstruct, require_trained, score_image_latent,
                      score_image_pixelspace, score_pixel, score_si_error)
from .superpixel import ProxyMode
from .training import TrainingData, freeze, train_stage1_proxy, train_stage2_recon

log = get_logger("score")

PROXY_CHECKPOINT = "proxy.ckpt"
RECON_CHECKPOINT = "recon.ckpt"
SCORE_BATCH = 64


# ============================================================
# CHECKPOINTS
# ============================================================

def _spec_meta(spec: EncoderSpec):
    return {
        "base_channels": str(spec.base_channels),
        "n_downsamples": str(spec.n_downsamples),
        "latent_dim": str(spec.latent_dim),
    }


def _spec_from_meta(meta, in_channels=1):
    try:
        return EncoderSpec(in_channels, int(meta["base_channels"]), int(meta["n_downsamples"]),
                           int(meta["latent_dim"]))
    except KeyError as e:
        raise ModelStateError(f"checkpoint is missing {e}") from None


def _load_state(module, tensors, name, allow_missing=()):
    missing, unexpected = module.load_state_dict(section_state(tensors, name), strict=False)
    bad = [k for k in missing if not (allow_missing and k.startswith(allow_missing))] + list(unexpected)
    if bad:
        raise ModelStateError(f"checkpoint section '{name}' does not match the model: {bad[:5]}")


def save_proxy_module(path, pem, config: ExperimentConfig):
    meta = {
        "stage": "proxy",
        "config_hash": config.config_hash(),
        "ablation_tag": config.ablation_config().tag(),
        "proxy_channels": str(pem.decoder.spec.out_channels),
        "use_memory": "true" if pem.use_memory else "false",
        **_spec_meta(pem.encoder.spec),
    }
    return write_checkpoint(path, {"pem": pem}, meta)


def load_proxy_module(path):
    meta, tensors, blobs = read_checkpoint(path)
    use_memory = meta.get("use_memory") == "true"
    memory = None
    if use_memory:
        if "pem.memory" not in blobs:
            raise ModelStateError(f"{path}: memory bank missing")
        memory = MemoryBank.from_bytes(blobs["pem.memory"])
    pem = build_proxy_module(_spec_from_meta(meta), int(meta["proxy_channels"]), memory, use_memory)
    _load_state(pem, tensors, "pem", allow_missing=("memory.",))
    return freeze(pem), meta


def save_recon_module(path, irm, discriminator, config: ExperimentConfig):
    meta = {
        "stage": "recon",
        "config_hash": config.config_hash(),
        "ablation_tag": config.ablation_config().tag(),
        "proxy_channels": str(irm.proxy_channels),
        "disc_base_channels": str(discriminator.spec.base_channels),
        "disc_layers": str(discriminator.spec.n_layers),
        **_spec_meta(irm.encoder.spec),
    }
    return write_checkpoint(path, {"irm": irm, "disc": discriminator}, meta)


def load_recon_module(path):
    meta, tensors, _ = read_checkpoint(path)
    channels = int(meta["proxy_channels"])
    irm = build_recon_module(_spec_from_meta(meta), channels)
    disc = build_discriminator(DiscriminatorSpec(1, int(meta["disc_base_channels"]), int(meta["disc_layers"])))
    _load_state(irm, tensors, "irm")
    _load_state(disc, tensors, "disc")
    return freeze(irm), freeze(disc), meta


# ============================================================
# DETECTOR
# ============================================================

@dataclass
class AnomalyDetector:
    config: ExperimentConfig
    pem: torch.nn.Module
    irm: Optional[torch.nn.Module] = None
    discriminator: Optional[torch.nn.Module] = None

    @property
    def ablation(self):
        return self.config.ablation_config()

    @property
    def has_si_error(self):
        a = self.ablation
        return a.use_si_proxy and a.proxy_mode == ProxyMode.SI

    def check_ready(self):
        require_trained(self.pem)
        if self.ablation.two_stage:
            require_trained(self.irm)

    def reconstruct(self, images):
        self.check_ready()
        return reconstruct(self.pem, self.irm if self.ablation.two_stage else None, images)

    def score_images(self, images, si_targets=None):
        """
        Score a (B,1,H,W) batch

        Returns dict of arrays: a_img, a_img_pixelspace, a_si_error (or
        None), a_pix (B,H,W), proxy_hat, image_hat.
        """
        batch = as_batch(images)
        proxy_hat, image_hat = self.reconstruct(batch)
        irm = self.irm if self.ablation.two_stage else None
        out = {
            "a_img": score_image_latent(self.pem, irm, batch, image_hat=image_hat),
            "a_img_pixelspace": score_image_pixelspace(batch, image_hat),
            "a_pix": score_pixel(batch[:, 0].numpy(), image_hat[:, 0].numpy()),
            "a_si_error": None,
            "proxy_hat": proxy_hat.numpy(),
            "image_hat": image_hat[:, 0].numpy(),
        }
        if self.has_si_error:
            out["a_si_error"] = score_si_error(self.pem, batch, self.config.proxy_params(), targets=si_targets)
        return out

    def score(self, samples: List[LabeledSample], si_targets=None) -> List[AnomalyRecord]:
        """AnomalyRecord per sample, in input order"""
        self.check_ready()
        records = []
        for start in range(0, len(samples), SCORE_BATCH):
            chunk = samples[start:start + SCORE_BATCH]
            targets = None if si_targets is None else np.stack(si_targets[start:start + SCORE_BATCH])
            result = self.score_images(np.stack([s.image for s in chunk]), targets)
            for i, sample in enumerate(chunk):
                si_error = result["a_si_error"]
                records.append(AnomalyRecord(
                    id=sample.id,
                    label=sample.label,
                    a_img=float(result["a_img"][i]),
                    a_pix=result["a_pix"][i],
                    a_img_pixelspace=float(result["a_img_pixelspace"][i]),
                    a_si_error=None if si_error is None else float(si_error[i]),
                    lesion_mask=sample.lesion_mask,
                ))
        log.info(f"✓ Scored {len(records)} images ({self.ablation.tag()})")
        return records

    def primary_score(self, record: AnomalyRecord):
        return record.a_img if self.ablation.score_in_latent else record.a_img_pixelspace

    # ----------------------------------------------------------
    # persistence
    # ----------------------------------------------------------

    def save(self, run_dir):
        run_dir = Path(run_dir)
        self.config.save(run_dir / "config.ini")
        save_proxy_module(run_dir / PROXY_CHECKPOINT, self.pem, self.config)
        if self.irm is not None:
            save_recon_module(run_dir / RECON_CHECKPOINT, self.irm, self.discriminator, self.config)
        return run_dir

    @classmethod
    def load(cls, run_dir, config: ExperimentConfig = None):
        run_dir = Path(run_dir)
        if config is None:
            config_path = run_dir / "config.ini"
            if not config_path.exists():
                raise ModelStateError(f"no trained run in {run_dir} (config.ini missing)")
            config = ExperimentConfig.load(config_path)
        pem, _ = load_proxy_module(run_dir / PROXY_CHECKPOINT)
        irm = disc = None
        if config.ablation_config().two_stage:
            irm, disc, _ = load_recon_module(run_dir / RECON_CHECKPOINT)
        return cls(config, pem, irm, disc)


def train_detector(config: ExperimentConfig, data: TrainingData, stage1=None):
    """
    Both training stages; `stage1` (a TrainedStage) is reused when given

    Returns (detector, {"proxy": history, "recon": history or None}).
    """
    ablation = config.ablation_config()
    if stage1 is None:
        stage1 = train_stage1_proxy(data, config.train_config("proxy"))
    histories = {"proxy": stage1.history, "recon": None}
    irm = disc = None
    if ablation.two_stage:
        stage2 = train_stage2_recon(data, stage1.module, config.train_config("recon"))
        irm, disc = stage2.module, stage2.discriminator
        histories["recon"] = stage2.history
    return AnomalyDetector(config, stage1.module, irm, disc), histories
