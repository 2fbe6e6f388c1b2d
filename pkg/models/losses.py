"""
Losses for both training stages

Squared errors use mean reduction over pixels. The generator side of
every adversarial term is the non-saturating −E[log D(fake)]; the
discriminator is trained separately on E[−log D(real) − log(1 − D(fake))].
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ArgumentError


@dataclass(frozen=True)
class LossWeights:
    lambda_g: float = 0.01
    lambda_global: float = 0.25
    lambda_local: float = 0.5
    beta_commit: float = 0.25

    def __post_init__(self):
        for name in ("lambda_g", "lambda_global", "lambda_local", "beta_commit"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be >= 0")


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse(prediction, target):
    _check_shapes(prediction, target)
    return F.mse_loss(prediction, target, reduction="mean")


def adversarial_generator(discriminator, fake):
    scores = discriminator(fake)
    return F.binary_cross_entropy(scores, torch.ones_like(scores))


def adversarial_discriminator(discriminator, real, fake):
    real_scores = discriminator(real)
    fake_scores = discriminator(fake.detach())
    return (F.binary_cross_entropy(real_scores, torch.ones_like(real_scores))
            + F.binary_cross_entropy(fake_scores, torch.zeros_like(fake_scores)))


def loss_proxy(proxy_hat, proxy):
    """L_p: predicted proxy vs target proxy"""
    return mse(proxy_hat, proxy)


def loss_commitment(z, z_tilde):
    """Pulls encoder features towards their retrieved items; the items only move by EMA"""
    return mse(z, z_tilde.detach())


def loss_rec(image_hat, image, discriminator, lambda_g=0.01):
    """L_rec: MSE plus λ_g times the generator adversarial term"""
    loss = mse(image_hat, image)
    if lambda_g > 0:
        loss = loss + lambda_g * adversarial_generator(discriminator, image_hat)
    return loss


def repairing_terms(image_hat_prime, image, mask, discriminator, lambda_g=0.01):
    """(L_global, L_local) for a reconstruction of a pseudo-abnormal proxy"""
    if mask.dim() == image.dim() - 1:
        mask = mask.unsqueeze(1)
    masked_hat = mask * image_hat_prime
    masked_real = mask * image
    l_global = mse(image_hat_prime, image)
    l_local = mse(masked_hat, masked_real)
    if lambda_g > 0:
        l_global = l_global + lambda_g * adversarial_generator(discriminator, image_hat_prime)
        l_local = l_local + lambda_g * adversarial_generator(discriminator, masked_hat)
    return l_global, l_local


def loss_repairing(image_hat_prime, image, mask, discriminator, weights: LossWeights):
    l_global, l_local = repairing_terms(image_hat_prime, image, mask, discriminator, weights.lambda_g)
    return weights.lambda_global * l_global + weights.lambda_local * l_local
