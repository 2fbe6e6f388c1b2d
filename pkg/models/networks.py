"""
Encoder / decoder / patch discriminator and the two composed modules:

    ProxyExtractionModule      image → proxy, with the memory bank between Enc_p and Dec_p
    ImageReconstructionModule  proxy → image
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ArgumentError, ConfigError
from .memory_bank import MemoryBank, straight_through


@dataclass(frozen=True)
class EncoderSpec:
    in_channels: int = 1
    base_channels: int = 32
    n_downsamples: int = 4
    latent_dim: int = 64

    def channels(self):
        """(32, 64, 64, d) for the default four blocks"""
        widths = [min(self.base_channels * 2 ** i, self.base_channels * 2) for i in range(self.n_downsamples - 1)]
        return widths + [self.latent_dim]


@dataclass(frozen=True)
class DecoderSpec:
    out_channels: int = 1
    base_channels: int = 32
    n_upsamples: int = 4
    latent_dim: int = 64

    @classmethod
    def mirror(cls, encoder: EncoderSpec, out_channels):
        return cls(out_channels, encoder.base_channels, encoder.n_downsamples, encoder.latent_dim)


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 1
    base_channels: int = 32
    n_layers: int = 3


def _fan_in_uniform_(module, generator):
    """Uniform(±1/sqrt(fan_in)) for every conv weight and bias"""
    for layer in module.modules():
        if isinstance(layer, nn.Conv2d):
            fan_in = layer.in_channels * layer.kernel_size[0] * layer.kernel_size[1]
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                layer.weight.copy_((torch.rand(layer.weight.shape, generator=generator) * 2 - 1) * bound)
                if layer.bias is not None:
                    layer.bias.copy_((torch.rand(layer.bias.shape, generator=generator) * 2 - 1) * bound)


class Encoder(nn.Module):
    """Stride-2 conv blocks (kernel 4) each followed by LeakyReLU(0.2)"""

    def __init__(self, spec: EncoderSpec, generator=None):
        super().__init__()
        if spec.n_downsamples < 1:
            raise ConfigError("encoder needs at least one downsampling block")
        self.spec = spec
        layers = []
        in_ch = spec.in_channels
        for out_ch in spec.channels():
            layers += [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = out_ch
        self.model = nn.Sequential(*layers)
        if generator is not None:
            _fan_in_uniform_(self, generator)

    def forward(self, x):
        factor = 2 ** self.spec.n_downsamples
        if x.shape[-1] % factor or x.shape[-2] % factor:
            raise ConfigError(
                f"image side {tuple(x.shape[-2:])} is not divisible by 2^{self.spec.n_downsamples}"
            )
        if x.shape[1] != self.spec.in_channels:
            raise ArgumentError(f"encoder expects {self.spec.in_channels} channels, got {x.shape[1]}")
        return self.model(x)


class Decoder(nn.Module):
    """Nearest 2x upsampling + stride-1 conv per block, sigmoid output"""

    def __init__(self, spec: DecoderSpec, generator=None):
        super().__init__()
        self.spec = spec
        encoder_widths = EncoderSpec(1, spec.base_channels, spec.n_upsamples, spec.latent_dim).channels()
        widths = list(reversed(encoder_widths[:-1])) + [spec.out_channels]
        layers = []
        in_ch = spec.latent_dim
        for i, out_ch in enumerate(widths):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1)]
            layers.append(nn.Sigmoid() if i == len(widths) - 1 else nn.LeakyReLU(0.2))
            in_ch = out_ch
        self.model = nn.Sequential(*layers)
        if generator is not None:
            _fan_in_uniform_(self, generator)

    def forward(self, z):
        if z.dim() != 4 or z.shape[1] != self.spec.latent_dim:
            raise ArgumentError(f"decoder expects (B, {self.spec.latent_dim}, h, w), got {tuple(z.shape)}")
        return self.model(z)


class PatchDiscriminator(nn.Module):
    """Stride-2 conv blocks then a 1-channel sigmoid score map"""

    def __init__(self, spec: DiscriminatorSpec, generator=None):
        super().__init__()
        self.spec = spec
        layers = []
        in_ch = spec.in_channels
        for i in range(spec.n_layers):
            out_ch = spec.base_channels * 2 ** i
            layers += [nn.Conv2d(in_ch, out_ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = out_ch
        layers += [nn.Conv2d(in_ch, 1, 3, stride=1, padding=1), nn.Sigmoid()]
        self.model = nn.Sequential(*layers)
        if generator is not None:
            _fan_in_uniform_(self, generator)

    def forward(self, x):
        return self.model(x)


class ProxyExtractionModule(nn.Module):
    """
    F_p: Enc_p → (memory retrieval) → Dec_p

    Forward returns (P̂, z, z̃, assignments). Without memory z̃ is z and
    assignments is None.
    """

    def __init__(self, encoder: Encoder, decoder: Decoder, memory: MemoryBank = None, use_memory=True):
        super().__init__()
        if use_memory and memory is None:
            raise ConfigError("use_memory is set but no memory bank was given")
        if use_memory and encoder.spec.latent_dim != memory.d:
            raise ConfigError(f"encoder latent dim {encoder.spec.latent_dim} != memory d {memory.d}")
        self.encoder = encoder
        self.decoder = decoder
        self.memory = memory if use_memory else None
        self.use_memory = bool(use_memory)

    def forward(self, image):
        z = self.encoder(image)
        if self.use_memory:
            z_tilde, assignments = self.memory.retrieve(z)
            proxy = self.decoder(straight_through(z, z_tilde))
        else:
            z_tilde, assignments = z, None
            proxy = self.decoder(z)
        return proxy, z, z_tilde, assignments


class ImageReconstructionModule(nn.Module):
    """F_g: Enc_g → Dec_g, proxy → image"""

    def __init__(self, encoder: Encoder, decoder: Decoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    @property
    def proxy_channels(self):
        return self.encoder.spec.in_channels

    def forward(self, proxy):
        if proxy.shape[1] != self.proxy_channels:
            raise ArgumentError(f"proxy has {proxy.shape[1]} channels, module expects {self.proxy_channels}")
        return self.decoder(self.encoder(proxy))


def encode(encoder, image):
    return encoder(image)


def decode(decoder, latent):
    return decoder(latent)


def discriminate(discriminator, image):
    return discriminator(image)


def build_proxy_module(encoder_spec: EncoderSpec, proxy_channels, memory: MemoryBank = None,
                       use_memory=True, seed=0):
    generator = torch.Generator().manual_seed(int(seed))
    encoder = Encoder(encoder_spec, generator)
    decoder = Decoder(DecoderSpec.mirror(encoder_spec, proxy_channels), generator)
    return ProxyExtractionModule(encoder, decoder, memory, use_memory)


def build_recon_module(encoder_spec: EncoderSpec, proxy_channels, seed=0):
    generator = torch.Generator().manual_seed(int(seed) + 1)
    spec = EncoderSpec(proxy_channels, encoder_spec.base_channels, encoder_spec.n_downsamples, encoder_spec.latent_dim)
    return ImageReconstructionModule(Encoder(spec, generator), Decoder(DecoderSpec.mirror(spec, 1), generator))


def build_discriminator(spec: DiscriminatorSpec, seed=0):
    return PatchDiscriminator(spec, torch.Generator().manual_seed(int(seed) + 2))
