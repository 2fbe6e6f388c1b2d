"""
Memory bank: k items of dimension d, hard nearest-item retrieval,
exponential-moving-average item updates and the straight-through
gradient used to train the encoder through the retrieval.
"""

import struct

import numpy as np
import torch
from torch import nn
from torch.autograd import Function

from .errors import ArgumentError
from .logs import get_logger

log = get_logger("memory")

EPS = 1e-5
MAGIC = b"PXMEMBNK"
# float64 elements per distance block in nearest(), about 32 MB
NEAREST_BLOCK = 1 << 22
VERSION = 1
# magic (8) + version (4) + reserved (4)
_HEADER = struct.Struct("<8sII")
_DIMS = struct.Struct("<IId")


def flatten_latent(z):
    """(B, d, h, w) feature map → (B·h·w, d) rows; 2-D input passes through"""
    if z.dim() == 2:
        return z
    if z.dim() != 4:
        raise ArgumentError(f"latent must be (B, d, h, w) or (s, d), got {tuple(z.shape)}")
    return z.permute(0, 2, 3, 1).reshape(-1, z.shape[1])


def unflatten_latent(rows, like):
    if like.dim() == 2:
        return rows
    b, d, h, w = like.shape
    return rows.reshape(b, h, w, d).permute(0, 3, 1, 2)


class MemoryBank(nn.Module):
    """
    Items m (k×d), counts N (k) and accumulators e (k×d), kept in float64

    After every update m_i = e_i / max(N_i, EPS).
    """

    def __init__(self, k, d, gamma=0.99):
        super().__init__()
        if k < 1 or d < 1:
            raise ArgumentError(f"memory needs k >= 1 and d >= 1, got k={k}, d={d}")
        if not 0.0 < gamma < 1.0:
            raise ArgumentError(f"gamma must lie in (0, 1), got {gamma}")
        self.k = int(k)
        self.d = int(d)
        self.gamma = float(gamma)
        self.register_buffer("items", torch.zeros(k, d, dtype=torch.float64))
        self.register_buffer("counts", torch.ones(k, dtype=torch.float64))
        self.register_buffer("accum", torch.zeros(k, d, dtype=torch.float64))

    def _check_dim(self, rows):
        if rows.shape[-1] != self.d:
            raise ArgumentError(f"latent dimension {rows.shape[-1]} does not match memory d={self.d}")

    @torch.no_grad()
    def nearest(self, rows):
        """Index of the nearest item per row; the lowest index wins ties"""
        self._check_dim(rows)
        rows = rows.detach().to(torch.float64)
        step = max(1, NEAREST_BLOCK // max(1, self.k * self.d))
        out = torch.empty(rows.shape[0], dtype=torch.long, device=rows.device)
        for start in range(0, rows.shape[0], step):
            diff = rows[start:start + step, None, :] - self.items[None, :, :]
            out[start:start + step] = torch.argmin((diff * diff).sum(dim=-1), dim=1)
        return out

    def retrieve(self, z):
        """Replace every latent row by its nearest item: (z̃, assignments)"""
        rows = flatten_latent(z)
        assignments = self.nearest(rows)
        z_tilde = self.items[assignments].to(z.dtype)
        return unflatten_latent(z_tilde, z), assignments

    @torch.no_grad()
    def ema_update(self, z, assignments):
        rows = flatten_latent(z).detach().to(torch.float64)
        self._check_dim(rows)
        assignments = torch.as_tensor(assignments, dtype=torch.long)
        if assignments.dim() != 1 or assignments.shape[0] != rows.shape[0]:
            raise ArgumentError(
                f"assignments length {tuple(assignments.shape)} does not match {rows.shape[0]} latent rows"
            )
        n = torch.bincount(assignments, minlength=self.k).to(torch.float64)
        sums = torch.zeros_like(self.accum).index_add_(0, assignments, rows)
        self.counts.mul_(self.gamma).add_(n * (1.0 - self.gamma))
        self.accum.mul_(self.gamma).add_(sums * (1.0 - self.gamma))
        self.items.copy_(self.accum / self.counts.clamp(min=EPS)[:, None])
        return self

    def usage(self, assignments):
        return int(torch.unique(torch.as_tensor(assignments)).numel())

    # ----------------------------------------------------------
    # serialization
    # ----------------------------------------------------------

    def to_bytes(self):
        blob = [_HEADER.pack(MAGIC, VERSION, 0), _DIMS.pack(self.k, self.d, self.gamma)]
        for tensor in (self.items, self.counts, self.accum):
            blob.append(tensor.detach().cpu().numpy().astype("<f8").tobytes())
        return b"".join(blob)

    @classmethod
    def from_bytes(cls, blob):
        magic, version, _ = _HEADER.unpack_from(blob, 0)
        if magic != MAGIC or version != VERSION:
            raise ArgumentError("not a memory bank blob (bad magic or version)")
        k, d, gamma = _DIMS.unpack_from(blob, _HEADER.size)
        bank = cls(k, d, gamma)
        offset = _HEADER.size + _DIMS.size
        for name, shape in (("items", (k, d)), ("counts", (k,)), ("accum", (k, d))):
            count = int(np.prod(shape))
            values = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
            getattr(bank, name).copy_(torch.from_numpy(values.copy()))
            offset += count * 8
        return bank


def init_bank(k, d, seed=0, warmup_features=None, gamma=0.99):
    """
    Seeded bank; with warmup features the items are k rows drawn from
    them (without replacement when there are at least k rows)
    """
    bank = MemoryBank(k, d, gamma)
    generator = torch.Generator().manual_seed(int(seed))
    if warmup_features is not None:
        rows = flatten_latent(torch.as_tensor(warmup_features)).detach().to(torch.float64)
        bank._check_dim(rows)
        s = rows.shape[0]
        if s >= k:
            index = torch.randperm(s, generator=generator)[:k]
        else:
            index = torch.randint(s, (k,), generator=generator)
        items = rows[index]
    else:
        bound = 1.0 / np.sqrt(d)
        items = (torch.rand(k, d, generator=generator, dtype=torch.float64) * 2.0 - 1.0) * bound
    bank.items.copy_(items)
    bank.counts.fill_(1.0)
    bank.accum.copy_(items)
    return bank


class _StraightThrough(Function):
    """Forward returns z̃; backward hands the incoming gradient to z"""

    @staticmethod
    def forward(ctx, z, z_tilde):
        return z_tilde.detach().clone()

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def straight_through(z, z_tilde):
    if z.shape != z_tilde.shape:
        raise ArgumentError(f"shapes differ: {tuple(z.shape)} vs {tuple(z_tilde.shape)}")
    return _StraightThrough.apply(z, z_tilde)
