"""
Velocity networks for the two generation pipelines.

Every network shares one call signature, ``forward(x_t, t, cond, mask=None)``,
and returns a velocity estimate with the shape of ``x_t``. Activations are SiLU
throughout so the loss is smooth in the parameters.
"""

import math
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError
from .models import GeometrySpec, ModelKind, TrainingHyper

__all__ = [
    "SinusoidalTimeEmbedding",
    "SetScoreNet",
    "GridScoreNet",
    "DenseScoreNet",
    "MultiplicityNet",
    "LayerEnergyNet",
    "build_network",
    "parameter_count",
    "condition_dim",
]

# diffusion time is scaled up before the sinusoids so low frequencies resolve (0, 1]
TIME_SCALE = 1000.0


class SinusoidalTimeEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        if dim % 2:
            raise ContractError("time embedding dimension must be even")
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        scale = math.log(10000.0) / max(half - 1, 1)
        freqs = torch.exp(-scale * torch.arange(half, dtype=t.dtype, device=t.device))
        args = TIME_SCALE * t[:, None] * freqs[None, :]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ConditionEmbedding(nn.Module):
    """Sinusoidal time embedding plus a learned projection of scalar conditions."""

    def __init__(self, time_dim: int, cond_dim: int, out_dim: int):
        super().__init__()
        self.time = nn.Sequential(
            SinusoidalTimeEmbedding(time_dim),
            nn.Linear(time_dim, out_dim),
            nn.SiLU(),
            nn.Linear(out_dim, out_dim),
        )
        self.cond = nn.Linear(cond_dim, out_dim)

    def forward(self, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.time(t) + self.cond(cond)


def _check_batch(x_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor, cond_dim: int):
    if t.shape != (x_t.shape[0],):
        raise ContractError(f"t must have shape ({x_t.shape[0]},), got {tuple(t.shape)}")
    if cond.shape != (x_t.shape[0], cond_dim):
        raise ContractError(f"cond must have shape ({x_t.shape[0]}, {cond_dim}), got {tuple(cond.shape)}")


class SetScoreNet(nn.Module):
    """
    Permutation-equivariant velocity network over masked point sets.

    Per-point feature map, masked-mean pooled context, one single-head masked
    attention block and a per-point output head. Masked rows never influence
    unmasked outputs and are returned as exact zeros.
    """

    def __init__(self, n_features: int = 4, cond_dim: int = 2, width: int = 64,
                 time_dim: int = 16):
        super().__init__()
        self.n_features = n_features
        self.cond_dim = cond_dim
        self.embed = ConditionEmbedding(time_dim, cond_dim, width)
        self.phi = nn.Sequential(
            nn.Linear(n_features, width),
            nn.SiLU(),
            nn.Linear(width, width),
            nn.SiLU(),
        )
        self.context = nn.Linear(width, width)
        self.query = nn.Linear(width, width)
        self.key = nn.Linear(width, width)
        self.value = nn.Linear(width, width)
        self.mix = nn.Linear(width, width)
        self.head = nn.Sequential(
            nn.Linear(width, width),
            nn.SiLU(),
            nn.Linear(width, n_features),
        )
        self.scale = 1.0 / math.sqrt(width)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        _check_batch(x_t, t, cond, self.cond_dim)
        if mask is None:
            mask = torch.ones(x_t.shape[:2], dtype=torch.bool, device=x_t.device)
        keep = mask[..., None]
        zeros = torch.zeros((), dtype=x_t.dtype, device=x_t.device)

        x = torch.where(keep, x_t, zeros)
        h = self.phi(x) + self.embed(t, cond)[:, None, :]
        h = torch.where(keep, h, zeros)

        count = mask.sum(dim=1, keepdim=True).clamp(min=1).to(h.dtype)
        pooled = h.sum(dim=1) / count
        h = h + self.context(pooled)[:, None, :]
        h = torch.where(keep, h, zeros)

        scores = torch.einsum("bnd,bmd->bnm", self.query(h), self.key(h)) * self.scale
        scores = scores.masked_fill(~mask[:, None, :], torch.finfo(h.dtype).min)
        weights = torch.softmax(scores, dim=-1)
        weights = torch.where(mask[:, None, :], weights, zeros)
        h = h + self.mix(torch.einsum("bnm,bmd->bnd", weights, self.value(h)))

        out = self.head(h)
        return torch.where(keep, out, zeros)


class ConvBlock(nn.Module):
    """Two 3x3x3 convolutions with a conditioning bias between them."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, groups: int = 4):
        super().__init__()
        self.conv1 = nn.Conv3d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(min(groups, out_ch), out_ch)
        self.emb = nn.Linear(emb_dim, out_ch)
        self.conv2 = nn.Conv3d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(min(groups, out_ch), out_ch)
        self.skip = nn.Conv3d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        h = h + self.emb(emb)[:, :, None, None, None]
        h = F.silu(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class VolumeAttention(nn.Module):
    """Single-head self-attention over the voxels of a small 3-D feature map."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(min(4, channels), channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.out = nn.Linear(channels, channels)
        self.scale = 1.0 / math.sqrt(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c = x.shape[:2]
        tokens = self.norm(x).reshape(b, c, -1).transpose(1, 2)
        q, k, v = self.qkv(tokens).chunk(3, dim=-1)
        weights = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        mixed = self.out(weights @ v).transpose(1, 2).reshape(x.shape)
        return x + mixed


class GridScoreNet(nn.Module):
    """
    Two-level 3-D convolutional encoder-decoder with attention at the bottleneck.

    ``x_t`` has shape ``(B, M, M, M)`` (normalized voxels); ``cond`` is
    ``(B, 1 + M)``: normalized momentum followed by the normalized layer energies.
    The layer energies also enter as a second input channel, constant across
    each z layer.
    """

    def __init__(self, resolution: int = 11, channels=(16, 32), time_dim: int = 16,
                 emb_dim: int = 64):
        super().__init__()
        c0, c1 = channels
        self.resolution = resolution
        self.cond_dim = 1 + resolution
        self.embed = ConditionEmbedding(time_dim, self.cond_dim, emb_dim)
        self.inp = nn.Conv3d(2, c0, 3, padding=1)
        self.enc0 = ConvBlock(c0, c0, emb_dim)
        self.down0 = nn.Conv3d(c0, c0, 3, stride=2, padding=1)
        self.enc1 = ConvBlock(c0, c1, emb_dim)
        self.down1 = nn.Conv3d(c1, c1, 3, stride=2, padding=1)
        self.mid = ConvBlock(c1, c1, emb_dim)
        self.attn = VolumeAttention(c1)
        self.dec1 = ConvBlock(c1 + c1, c1, emb_dim)
        self.dec0 = ConvBlock(c1 + c0, c0, emb_dim)
        self.out = nn.Conv3d(c0, 1, 3, padding=1)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        _check_batch(x_t, t, cond, self.cond_dim)
        m = self.resolution
        if x_t.shape[1:] != (m, m, m):
            raise ContractError(f"expected ({m}, {m}, {m}) voxels, got {tuple(x_t.shape[1:])}")
        emb = self.embed(t, cond)
        layers = cond[:, 1:][:, None, None, None, :].expand(-1, 1, m, m, m)
        h = self.inp(torch.cat([x_t[:, None], layers], dim=1))

        skip0 = self.enc0(h, emb)
        skip1 = self.enc1(self.down0(skip0), emb)
        h = self.mid(self.down1(skip1), emb)
        h = self.attn(h)

        h = F.interpolate(h, size=skip1.shape[-3:], mode="trilinear", align_corners=False)
        h = self.dec1(torch.cat([h, skip1], dim=1), emb)
        h = F.interpolate(h, size=skip0.shape[-3:], mode="trilinear", align_corners=False)
        h = self.dec0(torch.cat([h, skip0], dim=1), emb)
        return self.out(h)[:, 0]


class DenseScoreNet(nn.Module):
    """Small fully connected velocity network over a flat vector."""

    def __init__(self, dim: int, cond_dim: int = 1, width: int = 128, time_dim: int = 16):
        super().__init__()
        self.dim = dim
        self.cond_dim = cond_dim
        self.embed = ConditionEmbedding(time_dim, cond_dim, width)
        self.inp = nn.Linear(dim, width)
        self.body = nn.Sequential(
            nn.SiLU(),
            nn.Linear(width, width),
            nn.SiLU(),
            nn.Linear(width, width),
            nn.SiLU(),
        )
        self.out = nn.Linear(width, dim)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor,
                mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        _check_batch(x_t, t, cond, self.cond_dim)
        return self.out(self.body(self.inp(x_t) + self.embed(t, cond)))


class MultiplicityNet(DenseScoreNet):
    """Velocity of the standardized log hit count given the momentum."""

    def __init__(self, width: int = 128, time_dim: int = 16):
        super().__init__(dim=1, cond_dim=1, width=width, time_dim=time_dim)


class LayerEnergyNet(DenseScoreNet):
    """Velocity of the standardized per-layer log energies given the momentum."""

    def __init__(self, n_layers: int = 11, width: int = 128, time_dim: int = 16):
        super().__init__(dim=n_layers, cond_dim=1, width=width, time_dim=time_dim)


def condition_dim(kind: ModelKind, g: GeometrySpec) -> int:
    kind = ModelKind(kind)
    if kind is ModelKind.CLOUD:
        return 2
    if kind is ModelKind.IMAGE:
        return 1 + g.n_voxels_per_axis
    return 1


def build_network(kind: ModelKind, hyper: TrainingHyper, g: GeometrySpec) -> nn.Module:
    """Fresh network for ``kind``; initialization draws from the global torch RNG."""
    kind = ModelKind(kind)
    if kind is ModelKind.CLOUD:
        return SetScoreNet(width=hyper.width, time_dim=hyper.time_embedding_dim)
    if kind is ModelKind.IMAGE:
        return GridScoreNet(resolution=g.n_voxels_per_axis, channels=hyper.grid_channels,
                            time_dim=hyper.time_embedding_dim, emb_dim=hyper.width)
    if kind is ModelKind.MULTIPLICITY:
        return MultiplicityNet(width=hyper.dense_width, time_dim=hyper.time_embedding_dim)
    return LayerEnergyNet(n_layers=g.n_voxels_per_axis, width=hyper.dense_width,
                          time_dim=hyper.time_embedding_dim)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
