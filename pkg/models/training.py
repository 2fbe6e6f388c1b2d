"""
Two-stage training

Stage 1 (`proxy`): Enc_p / Dec_p learn image → proxy, with the memory
bank updated by EMA after every gradient step.
Stage 2 (`recon`): with stage 1 frozen, Enc_g / Dec_g learn proxy → image
against a patch discriminator, plus the repairing terms on
cut-paste pseudo-abnormal proxies.
"""

import time
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import torch

from .ablation_profiles import AblationConfig
from .errors import ArgumentError, TrainingDivergence
from .losses import LossWeights, adversarial_discriminator, loss_commitment, loss_proxy, loss_rec, repairing_terms
from .logs import BANNER, get_logger
from .memory_bank import init_bank
from .networks import (DiscriminatorSpec, EncoderSpec, ProxyExtractionModule, build_discriminator,
                       build_proxy_module, build_recon_module)
from .papc import construct_pseudo_proxy, pick_source_index

log = get_logger("train")

STAGES = ("proxy", "recon")
PROXY_COLUMNS = ["epoch", "loss_proxy", "loss_commit"]
RECON_COLUMNS = ["epoch", "loss_rec", "loss_global", "loss_local", "loss_d", "loss_total"]


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "proxy"
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.001
    seed: int = 0
    ablation: AblationConfig = field(default_factory=AblationConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    betas: Tuple[float, float] = (0.5, 0.999)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    memory_k: int = 128
    memory_gamma: float = 0.99
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    recon_train_input: str = "predicted"
    papc_source: str = "other"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ArgumentError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.learning_rate <= 0:
            raise ArgumentError("learning_rate must be > 0")


@dataclass
class TrainingData:
    """Normal training images (N,1,H,W) with their proxies (N,C,H,W)"""
    images: torch.Tensor
    proxies: torch.Tensor
    ids: list = field(default_factory=list)

    @classmethod
    def from_arrays(cls, images, proxies, ids=None):
        images_t = torch.from_numpy(np.stack(images).astype(np.float32))[:, None]
        proxies_t = torch.from_numpy(np.stack(proxies).astype(np.float32)).permute(0, 3, 1, 2).contiguous()
        return cls(images_t, proxies_t, list(ids or []))

    def __len__(self):
        return self.images.shape[0]

    @property
    def edges(self):
        """Edge channel of two-channel proxies, as numpy (N,H,W)"""
        if self.proxies.shape[1] < 2:
            return None
        return self.proxies[:, 1].numpy()


@dataclass
class TrainedStage:
    module: torch.nn.Module
    history: pd.DataFrame
    discriminator: Optional[torch.nn.Module] = None


def _check_finite(loss, stage, epoch, batch):
    if not torch.isfinite(loss).all():
        raise TrainingDivergence(stage, epoch, batch, f"loss = {loss.item()}")


def _batches(n, batch_size, generator):
    order = torch.randperm(n, generator=generator)
    for b, start in enumerate(range(0, n, batch_size)):
        yield b, order[start:start + batch_size]


def freeze(module):
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def train_stage1_proxy(data: TrainingData, config: TrainConfig) -> TrainedStage:
    """Train F_p on image → proxy (or image → image without the proxy bridge)"""
    ablation = config.ablation
    targets = data.proxies if ablation.use_si_proxy else data.images
    channels = targets.shape[1]
    n = len(data)
    bs = config.batch_size

    log.info(BANNER)
    log.info(f"🚀 STAGE 1 ({ablation.tag()}): {n} images → {channels}-channel "
             f"{'proxy' if ablation.use_si_proxy else 'image'} | {config.epochs} epochs")
    log.info(BANNER)
    torch.manual_seed(config.seed)

    pem = build_proxy_module(config.encoder, channels, use_memory=False, seed=config.seed)
    if ablation.use_memory:
        with torch.no_grad():
            warmup = pem.encoder(data.images[:bs])
        bank = init_bank(config.memory_k, config.encoder.latent_dim, config.seed, warmup, config.memory_gamma)
        pem = ProxyExtractionModule(pem.encoder, pem.decoder, bank, use_memory=True)

    optimizer = torch.optim.Adam(pem.parameters(), lr=config.learning_rate, betas=config.betas)
    generator = torch.Generator().manual_seed(config.seed)
    history = []
    start_time = time.time()

    pem.train()
    for epoch in range(1, config.epochs + 1):
        total, total_commit, used = 0.0, 0.0, set()
        for b, idx in _batches(n, bs, generator):
            proxy_hat, z, z_tilde, assignments = pem(data.images[idx])
            l_p = loss_proxy(proxy_hat, targets[idx])
            loss = l_p
            if pem.use_memory:
                commit = loss_commitment(z, z_tilde)
                loss = loss + config.weights.beta_commit * commit
                total_commit += commit.item() * len(idx)
            _check_finite(loss, "proxy", epoch, b)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if pem.use_memory:
                pem.memory.ema_update(z.detach(), assignments)
                used.update(assignments.tolist())
            total += l_p.item() * len(idx)
            log.debug(f"epoch {epoch} batch {b}: L_p = {l_p.item():.6f}")
        history.append({"epoch": epoch, "loss_proxy": total / n, "loss_commit": total_commit / n})
        usage = f" | memory items used: {len(used)}/{config.memory_k}" if pem.use_memory else ""
        log.info(f"✓ Epoch {epoch}/{config.epochs}: L_p = {total / n:.6f}{usage}")

    freeze(pem)
    log.info(f"✅ STAGE 1 COMPLETE in {time.time() - start_time:.2f}s")
    return TrainedStage(pem, pd.DataFrame(history, columns=PROXY_COLUMNS))


@torch.no_grad()
def predict_proxies(pem, images, batch_size=64):
    """P̂ for every image, in order"""
    outputs = [pem(images[i:i + batch_size])[0] for i in range(0, images.shape[0], batch_size)]
    return torch.cat(outputs)


def _pseudo_batch(idx, base, images_np, edges, epoch, config):
    """P′ and M for every sample of a batch; each sample has its own rng stream"""
    proxies, masks = [], []
    base_np = base.permute(0, 2, 3, 1).numpy()
    for i in idx.tolist():
        rng = np.random.default_rng([config.seed, epoch, i])
        src = pick_source_index(rng, len(images_np), i, config.papc_source)
        pseudo = construct_pseudo_proxy(
            base_np[i], images_np[src], rng, source_id=str(src),
            source_edges=None if edges is None else edges[src],
        )
        proxies.append(pseudo.proxy_prime)
        masks.append(pseudo.mask)
    proxy_prime = torch.from_numpy(np.stack(proxies)).permute(0, 3, 1, 2).contiguous()
    mask = torch.from_numpy(np.stack(masks))[:, None]
    return proxy_prime, mask


def train_stage2_recon(data: TrainingData, frozen_pem, config: TrainConfig) -> TrainedStage:
    """Train F_g on proxy → image with the adversarial and repairing losses"""
    ablation = config.ablation
    weights = config.weights
    if not ablation.use_si_proxy:
        raise ArgumentError("stage 2 needs the proxy bridge (use_si_proxy)")
    if any(p.requires_grad for p in frozen_pem.parameters()):
        raise ArgumentError("stage 1 module must be frozen before stage 2")

    n = len(data)
    if config.recon_train_input == "predicted":
        base = predict_proxies(frozen_pem, data.images)
    else:
        base = data.proxies
    channels = base.shape[1]
    images_np = data.images[:, 0].numpy()
    edges = data.edges

    log.info(BANNER)
    log.info(f"🚀 STAGE 2 ({ablation.tag()}): {config.recon_train_input} {channels}-channel proxy → image | "
             f"repairing {'on' if ablation.use_repairing else 'off'} | {config.epochs} epochs")
    log.info(BANNER)
    torch.manual_seed(config.seed)

    irm = build_recon_module(config.encoder, channels, seed=config.seed)
    disc = build_discriminator(config.discriminator, seed=config.seed)
    opt_g = torch.optim.Adam(irm.parameters(), lr=config.learning_rate, betas=config.betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=config.betas)
    adversarial = weights.lambda_g > 0
    generator = torch.Generator().manual_seed(config.seed)
    history = []
    start_time = time.time()

    irm.train()
    disc.train()
    for epoch in range(1, config.epochs + 1):
        sums = dict(loss_rec=0.0, loss_global=0.0, loss_local=0.0, loss_d=0.0, loss_total=0.0)
        d_correct, d_seen = 0.0, 0
        for b, idx in _batches(n, config.batch_size, generator):
            image = data.images[idx]
            image_hat = irm(base[idx])
            if ablation.use_repairing:
                proxy_prime, mask = _pseudo_batch(idx, base, images_np, edges, epoch, config)
                image_hat_prime = irm(proxy_prime)

            if adversarial:
                d_loss = adversarial_discriminator(disc, image, image_hat)
                if ablation.use_repairing:
                    d_loss = d_loss + adversarial_discriminator(disc, image, image_hat_prime)
                    d_loss = d_loss + adversarial_discriminator(disc, mask * image, mask * image_hat_prime)
                _check_finite(d_loss, "recon", epoch, b)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                with torch.no_grad():
                    d_correct += (disc(image) > 0.5).float().mean().item() * len(idx)
                    d_correct += (disc(image_hat) < 0.5).float().mean().item() * len(idx)
                    d_seen += 2 * len(idx)
                sums["loss_d"] += d_loss.item() * len(idx)

            l_rec = loss_rec(image_hat, image, disc, weights.lambda_g)
            total = l_rec
            if ablation.use_repairing:
                l_global, l_local = repairing_terms(image_hat_prime, image, mask, disc, weights.lambda_g)
                total = total + weights.lambda_global * l_global + weights.lambda_local * l_local
                sums["loss_global"] += l_global.item() * len(idx)
                sums["loss_local"] += l_local.item() * len(idx)
            _check_finite(total, "recon", epoch, b)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
            sums["loss_rec"] += l_rec.item() * len(idx)
            sums["loss_total"] += total.item() * len(idx)

        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        history.append(row)
        d_acc = f" | D acc {d_correct / d_seen:.3f}" if d_seen else ""
        log.info(f"✓ Epoch {epoch}/{config.epochs}: L_rec = {row['loss_rec']:.6f} | "
                 f"L_global = {row['loss_global']:.6f} | L_local = {row['loss_local']:.6f} | "
                 f"D = {row['loss_d']:.4f}{d_acc}")

    freeze(irm)
    freeze(disc)
    log.info(f"✅ STAGE 2 COMPLETE in {time.time() - start_time:.2f}s")
    return TrainedStage(irm, pd.DataFrame(history, columns=RECON_COLUMNS), disc)
