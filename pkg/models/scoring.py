"""
Anomaly scores

    a_img             ‖Enc_p(I) − Enc_p(Î)‖_F   latent-space image score
    a_img_pixelspace  ‖I − Î‖_F                 image-space image score
    a_si_error        MSE(F_p(I), SLIC-SI(I))   proxy prediction error
    a_pix             |I − Î|                   pixel map

Image batches are (B,1,H,W) tensors; single H×W arrays are accepted too.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .errors import ArgumentError, ModelStateError
from .imaging import ABNORMAL, LABELS
from .logs import get_logger
from .superpixel import ProxyMode, ProxyParams, make_proxy

log = get_logger("score")


@dataclass
class AnomalyRecord:
    id: str
    label: str
    a_img: float
    a_pix: np.ndarray
    a_img_pixelspace: float = 0.0
    a_si_error: Optional[float] = None
    lesion_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ArgumentError(f"label must be one of {LABELS}, got {self.label!r}")
        if not np.isfinite(self.a_img) or self.a_img < 0:
            raise ArgumentError(f"{self.id}: a_img must be finite and >= 0, got {self.a_img}")
        if not np.all(np.isfinite(self.a_pix)):
            raise ArgumentError(f"{self.id}: a_pix has non-finite values")

    @property
    def is_abnormal(self):
        return self.label == ABNORMAL


def as_batch(images):
    """(B,1,H,W) float32 tensor from a tensor, an H×W array or a B×H×W array"""
    if isinstance(images, torch.Tensor):
        batch = images
    else:
        batch = torch.from_numpy(np.asarray(images, dtype=np.float32))
    if batch.dim() == 2:
        batch = batch[None, None]
    elif batch.dim() == 3:
        batch = batch[:, None]
    if batch.dim() != 4:
        raise ArgumentError(f"cannot read shape {tuple(batch.shape)} as an image batch")
    return batch.float()


def require_trained(*modules):
    for module in modules:
        if module is None:
            raise ModelStateError("model is not trained; run train-proxy / train-recon first")
        if any(p.requires_grad for p in module.parameters()):
            raise ModelStateError(f"{type(module).__name__} is still in training (not frozen)")


def frobenius(a, b):
    """Per-sample Frobenius norm of a − b, computed in float64"""
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = (torch.as_tensor(a).double() - torch.as_tensor(b).double()).flatten(1)
    return torch.linalg.vector_norm(diff, dim=1).numpy()


@torch.no_grad()
def reconstruct(pem, irm, images):
    """(P̂, Î); without a reconstruction module Î is P̂ (single-module rows)"""
    batch = as_batch(images)
    proxy_hat = pem(batch)[0]
    image_hat = proxy_hat if irm is None else irm(proxy_hat)
    return proxy_hat, image_hat


@torch.no_grad()
def score_image_latent(pem, irm, images, image_hat=None):
    """a_img per sample: encoder features of I against those of its reconstruction"""
    require_trained(pem)
    batch = as_batch(images)
    if image_hat is None:
        _, image_hat = reconstruct(pem, irm, batch)
    z = pem.encoder(batch)
    z_hat = pem.encoder(as_batch(image_hat))
    return frobenius(z, z_hat)


def score_pixel(image, image_hat):
    image = np.asarray(image, dtype=np.float64)
    image_hat = np.asarray(image_hat, dtype=np.float64)
    if image.shape != image_hat.shape:
        raise ArgumentError(f"shape mismatch: {image.shape} vs {image_hat.shape}")
    return np.abs(image - image_hat)


def score_image_pixelspace(images, image_hat):
    return frobenius(as_batch(images), as_batch(image_hat))


@torch.no_grad()
def score_si_error(pem, images, slic_params: ProxyParams = None, targets=None):
    """MSE between F_p(I) and the SLIC superpixel image of I, per sample"""
    require_trained(pem)
    batch = as_batch(images)
    if targets is None:
        targets = np.stack([make_proxy(img, ProxyMode.SI, slic_params) for img in batch[:, 0].numpy()])
    targets = torch.as_tensor(np.asarray(targets, dtype=np.float32))
    if targets.dim() == 4 and targets.shape[-1] == 1:
        targets = targets.permute(0, 3, 1, 2)
    proxy_hat = pem(batch)[0]
    if proxy_hat.shape != targets.shape:
        raise ArgumentError(f"proxy shape {tuple(proxy_hat.shape)} does not match SI {tuple(targets.shape)}")
    diff = (proxy_hat.double() - targets.double()).flatten(1)
    return (diff ** 2).mean(dim=1).numpy()
