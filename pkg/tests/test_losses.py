import math

import pytest
import torch
from torch import nn

from models.errors import ArgumentError
from models.losses import (LossWeights, adversarial_discriminator, loss_commitment, loss_proxy, loss_rec,
                           loss_repairing, repairing_terms)
from models.networks import EncoderSpec, build_recon_module

LN2 = math.log(2.0)


class HalfDiscriminator(nn.Module):
    """D(x) = 0.5 everywhere, still differentiable in x"""

    def forward(self, x):
        return torch.full((x.shape[0], 1, 4, 4), 0.5) + 0.0 * x.mean()


class TestValues:
    def test_constant_offset(self):
        proxy = torch.rand(2, 1, 16, 16)
        assert loss_proxy(proxy + 0.1, proxy).item() == pytest.approx(0.01, rel=1e-4)

    def test_identical_is_zero(self):
        proxy = torch.rand(2, 2, 16, 16)
        assert loss_proxy(proxy, proxy).item() == 0.0

    def test_rec_plug_in(self):
        image = torch.rand(2, 1, 16, 16)
        value = loss_rec(image, image, HalfDiscriminator(), lambda_g=0.01).item()
        assert value == pytest.approx(0.01 * LN2, rel=1e-6)
        assert value == pytest.approx(0.006931, abs=1e-6)

    def test_rec_without_adversary_is_mse(self):
        image, image_hat = torch.rand(2, 1, 16, 16), torch.rand(2, 1, 16, 16)
        expected = ((image_hat - image) ** 2).mean().item()
        assert loss_rec(image_hat, image, None, lambda_g=0.0).item() == pytest.approx(expected, rel=1e-6)

    def test_repairing_plug_in(self):
        image = torch.rand(2, 1, 16, 16)
        mask = torch.zeros(2, 16, 16)
        mask[:, 4:8, 4:8] = 1.0
        value = loss_repairing(image, image, mask, HalfDiscriminator(), LossWeights()).item()
        assert value == pytest.approx(0.75 * 0.01 * LN2, rel=1e-6)
        assert value == pytest.approx(0.005199, abs=1e-6)

    def test_repairing_terms_match_recomputation(self):
        generator = torch.Generator().manual_seed(0)
        image = torch.rand(2, 1, 16, 16, generator=generator)
        repaired = torch.rand(2, 1, 16, 16, generator=generator)
        mask = (torch.rand(2, 1, 16, 16, generator=generator) > 0.7).float()
        l_global, l_local = repairing_terms(repaired, image, mask, None, lambda_g=0.0)
        assert l_global.item() == pytest.approx(((repaired - image) ** 2).mean().item(), rel=1e-6)
        assert l_local.item() == pytest.approx(((mask * repaired - mask * image) ** 2).mean().item(), rel=1e-6)

    def test_discriminator_loss_at_half(self):
        image = torch.rand(2, 1, 16, 16)
        value = adversarial_discriminator(HalfDiscriminator(), image, image).item()
        assert value == pytest.approx(2 * LN2, rel=1e-6)

    def test_negative_weight(self):
        with pytest.raises(ArgumentError):
            LossWeights(lambda_local=-0.1)
        with pytest.raises(ArgumentError):
            LossWeights(beta_commit=-1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ArgumentError):
            loss_proxy(torch.zeros(1, 1, 16, 16), torch.zeros(1, 2, 16, 16))


class TestGradients:
    def test_commitment_only_moves_the_features(self):
        z = torch.tensor([[1.0, 2.0], [0.0, -1.0]], requires_grad=True)
        z_tilde = torch.tensor([[0.0, 2.0], [0.0, 1.0]], requires_grad=True)
        loss = loss_commitment(z, z_tilde)
        assert loss.item() == pytest.approx((1.0 + 4.0) / 4)
        loss.backward()
        torch.testing.assert_close(z.grad, (z.detach() - z_tilde.detach()) / 2)
        assert z_tilde.grad is None

    def test_proxy_loss_gradcheck(self):
        target = torch.rand(1, 1, 4, 4, dtype=torch.float64)
        prediction = torch.rand(1, 1, 4, 4, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda p: loss_proxy(p, target), (prediction,))

    def test_rec_loss_gradient_matches_finite_differences(self):
        irm = build_recon_module(EncoderSpec(1, 2, 2, 2), 1, seed=0).double()
        proxy = torch.rand(1, 1, 16, 16, dtype=torch.float64)
        image = torch.rand(1, 1, 16, 16, dtype=torch.float64)
        weight = irm.encoder.model[0].weight

        def value():
            return loss_rec(irm(proxy), image, None, lambda_g=0.0)

        value().backward()
        analytic = weight.grad.clone()
        h = 1e-6
        with torch.no_grad():
            for index in [(0, 0, 0, 0), (1, 0, 2, 3), (0, 0, 3, 1)]:
                original = weight[index].item()
                weight[index] = original + h
                up = value().item()
                weight[index] = original - h
                down = value().item()
                weight[index] = original
                numeric = (up - down) / (2 * h)
                assert analytic[index].item() == pytest.approx(numeric, rel=1e-4, abs=1e-9)
