import numpy as np
import pytest
import torch

from models import training
from models.ablation_profiles import AblationConfig, get_ablation_config
from models.errors import ArgumentError, TrainingDivergence
from models.imaging import generate_phantoms
from models.losses import LossWeights, loss_proxy
from models.memory_bank import init_bank
from models.networks import DiscriminatorSpec, EncoderSpec, build_proxy_module
from models.proxy_cache import compute_proxies
from models.superpixel import ProxyMode, ProxyParams
from models.training import (PROXY_COLUMNS, RECON_COLUMNS, TrainConfig, TrainingData, freeze,
                             train_stage1_proxy, train_stage2_recon)


def _config(stage="proxy", ablation=None, **kwargs):
    values = dict(
        stage=stage,
        epochs=2,
        batch_size=4,
        learning_rate=0.01,
        ablation=ablation or AblationConfig(),
        encoder=EncoderSpec(1, 4, 3, 8),
        memory_k=8,
        discriminator=DiscriminatorSpec(1, 4, 2),
    )
    values.update(kwargs)
    return TrainConfig(**values)


@pytest.fixture
def data(tiny_spec):
    train, _ = generate_phantoms(tiny_spec)
    images = [s.image for s in train]
    proxies = compute_proxies(images, ProxyMode.SI, ProxyParams(n_superpixels=12), threads=1)
    return TrainingData.from_arrays(images, proxies, [s.id for s in train])


@pytest.fixture
def stage1(data):
    return train_stage1_proxy(data, _config(epochs=1))


class TestTrainConfig:
    def test_unknown_stage(self):
        with pytest.raises(ArgumentError):
            TrainConfig(stage="finetune")

    def test_learning_rate(self):
        with pytest.raises(ArgumentError):
            TrainConfig(learning_rate=0.0)


class TestStage1:
    def test_loss_decreases(self, data):
        result = train_stage1_proxy(data, _config(epochs=5, ablation=get_ablation_config(4)))
        losses = result.history["loss_proxy"].tolist()
        assert list(result.history.columns) == PROXY_COLUMNS
        assert losses[-1] < losses[0]

    def test_commitment_is_logged_with_memory_only(self, data):
        with_memory = train_stage1_proxy(data, _config(epochs=1)).history
        without = train_stage1_proxy(data, _config(epochs=1, ablation=get_ablation_config(4))).history
        assert with_memory["loss_commit"].gt(0).all()
        assert without["loss_commit"].eq(0).all()

    def test_module_is_frozen(self, stage1):
        assert not any(p.requires_grad for p in stage1.module.parameters())
        assert stage1.module.memory is not None

    def test_same_seed_same_result(self, data):
        a = train_stage1_proxy(data, _config())
        b = train_stage1_proxy(data, _config())
        assert a.history.equals(b.history)
        for (key, x), (_, y) in zip(a.module.state_dict().items(), b.module.state_dict().items()):
            assert torch.equal(x, y), key

    def test_autoencoder_targets_the_input(self, data, mocker):
        spy = mocker.spy(training, "loss_proxy")
        train_stage1_proxy(data, _config(epochs=1, ablation=get_ablation_config(1)))
        for call in spy.call_args_list:
            target = call.args[1]
            assert target.shape[1] == 1
            for row in target:
                assert any(torch.equal(row, image) for image in data.images)

    def test_proxy_targets_the_proxies(self, data, mocker):
        spy = mocker.spy(training, "loss_proxy")
        train_stage1_proxy(data, _config(epochs=1, ablation=get_ablation_config(4)))
        for row in spy.call_args_list[0].args[1]:
            assert any(torch.equal(row, proxy) for proxy in data.proxies)

    def test_nan_loss_raises_divergence(self, data, mocker):
        mocker.patch.object(training, "loss_proxy", return_value=torch.tensor(float("nan"), requires_grad=True))
        with pytest.raises(TrainingDivergence) as err:
            train_stage1_proxy(data, _config())
        assert (err.value.stage, err.value.epoch, err.value.batch) == ("proxy", 1, 0)


class TestStage2:
    def test_history_columns(self, data, stage1):
        result = train_stage2_recon(data, stage1.module, _config("recon"))
        assert list(result.history.columns) == RECON_COLUMNS
        assert len(result.history) == 2
        assert result.history["loss_local"].gt(0).all()
        assert not any(p.requires_grad for p in result.module.parameters())
        assert not any(p.requires_grad for p in result.discriminator.parameters())

    def test_total_loss_decreases(self, data, stage1):
        config = _config("recon", epochs=8, weights=LossWeights(lambda_g=0.0))
        totals = train_stage2_recon(data, stage1.module, config).history["loss_total"].tolist()
        assert totals[-1] < totals[0]

    def test_stage1_is_untouched(self, data, stage1):
        before = {k: v.clone() for k, v in stage1.module.state_dict().items()}
        train_stage2_recon(data, stage1.module, _config("recon"))
        for key, value in stage1.module.state_dict().items():
            assert torch.equal(value, before[key]), key

    def test_without_repairing_or_adversary(self, data, stage1):
        config = _config("recon", ablation=get_ablation_config(5), weights=LossWeights(lambda_g=0.0))
        history = train_stage2_recon(data, stage1.module, config).history
        assert history["loss_global"].eq(0).all()
        assert history["loss_d"].eq(0).all()
        np.testing.assert_allclose(history["loss_total"], history["loss_rec"])

    def test_slic_input(self, data, stage1):
        result = train_stage2_recon(data, stage1.module, _config("recon", recon_train_input="slic", epochs=1))
        assert result.module.proxy_channels == 1

    def test_same_seed_same_repairing_losses(self, data, stage1):
        a = train_stage2_recon(data, stage1.module, _config("recon", epochs=1))
        b = train_stage2_recon(data, stage1.module, _config("recon", epochs=1))
        assert a.history.equals(b.history)

    def test_requires_frozen_stage1(self, data):
        live = train_stage1_proxy(data, _config(epochs=1)).module
        for p in live.parameters():
            p.requires_grad_(True)
        with pytest.raises(ArgumentError):
            train_stage2_recon(data, live, _config("recon"))

    def test_requires_proxy_bridge(self, data, stage1):
        with pytest.raises(ArgumentError):
            train_stage2_recon(data, stage1.module, _config("recon", ablation=get_ablation_config(1)))

    def test_freeze_helper(self, stage1):
        assert freeze(stage1.module) is stage1.module
        assert not stage1.module.training


def test_encoder_gets_gradients_through_memory(data):
    pem = build_proxy_module(EncoderSpec(1, 4, 3, 8), 1, init_bank(8, 8, seed=0))
    proxy_hat, _, _, _ = pem(data.images)
    loss_proxy(proxy_hat, data.proxies).backward()
    grads = [p.grad for p in pem.encoder.parameters()]
    assert all(g is not None for g in grads)
    assert any(g.abs().sum().item() > 0 for g in grads)
