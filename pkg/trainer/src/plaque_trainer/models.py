"""UNet and attention-UNet model construction.

The encoder path stacks conv-batchnorm-leakyReLU blocks with max-pool
downsampling; the decoder mirrors it with transposed-conv upsampling,
skip concatenation, and ReLU activations. Every convolutional block ends
in spatial dropout. The attention variant multiplies each skip tensor by
an additive attention gate before concatenation and keeps the most recent
gate activations for visualization.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig
from .errors import NotAttentionModel


class ConvBlock(nn.Module):
    """Two conv(3x3) -> batchnorm -> activation stages, then dropout."""

    def __init__(self, in_ch: int, out_ch: int, activation: str, dropout_p: float):
        super().__init__()
        def act():
            return nn.LeakyReLU() if activation == "leaky" else nn.ReLU()

        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            act(),
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            act(),
            nn.Dropout2d(dropout_p),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class AttentionGate(nn.Module):
    """Additive attention over a skip connection.

    The skip is strided down to the gating signal's resolution, combined
    additively, and squashed to a [0, 1] weighting that is upsampled back
    to the skip size. The gated skip then passes through a 1x1 conv with
    batchnorm so suppressed regions do not starve downstream magnitudes.
    The latest weighting is kept (detached) on ``last_map`` for export.
    """

    def __init__(self, skip_channels: int, gate_channels: int):
        super().__init__()
        inter = max(skip_channels // 2, 1)
        self.theta = nn.Conv2d(skip_channels, inter, 2, stride=2, bias=False)
        self.phi = nn.Conv2d(gate_channels, inter, 1)
        self.psi = nn.Conv2d(inter, 1, 1)
        self.out = nn.Sequential(
            nn.Conv2d(skip_channels, skip_channels, 1),
            nn.BatchNorm2d(skip_channels),
        )
        self.last_map: torch.Tensor | None = None

    def forward(self, skip: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
        joined = torch.relu(self.theta(skip) + self.phi(gate))
        attention = torch.sigmoid(self.psi(joined))
        attention = nn.functional.interpolate(
            attention, size=skip.shape[-2:], mode="bilinear", align_corners=False
        )
        self.last_map = attention.detach()
        return self.out(skip * attention)


class SegmentationUNet(nn.Module):
    """Encoder-decoder segmentation network emitting a 1-channel probability map."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        depth, base, p = config.depth, config.base_channels, config.dropout_p
        channels = [base * 2**i for i in range(depth + 1)]

        self.encoders = nn.ModuleList()
        in_ch = 3
        for ch in channels[:-1]:
            self.encoders.append(ConvBlock(in_ch, ch, "leaky", p))
            in_ch = ch
        self.pool = nn.MaxPool2d(2)
        self.middle = ConvBlock(channels[-2], channels[-1], "leaky", p)

        self.upconvs = nn.ModuleList()
        self.decoders = nn.ModuleList()
        gates = []
        # decoder steps run coarsest skip first
        for ch_out, ch_in in zip(reversed(channels[:-1]), reversed(channels[1:])):
            self.upconvs.append(nn.ConvTranspose2d(ch_in, ch_out, 2, stride=2))
            self.decoders.append(ConvBlock(2 * ch_out, ch_out, "relu", p))
            gates.append(AttentionGate(ch_out, ch_in))
        self.gates = nn.ModuleList(gates) if config.arch == "attention_unet" else None
        self.head = nn.Conv2d(channels[0], 1, 1)

    @property
    def is_attention(self) -> bool:
        return self.gates is not None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        stride = 2**self.config.depth
        h, w = x.shape[-2:]
        if h % stride or w % stride:
            raise ValueError(f"input {h}x{w} not divisible by {stride}")
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        x = self.middle(x)
        for i, (upconv, decoder) in enumerate(zip(self.upconvs, self.decoders)):
            skip = skips[-1 - i]
            if self.gates is not None:
                # gating signal is the decoder state before upsampling
                skip = self.gates[i](skip, x)
            x = decoder(torch.cat([skip, upconv(x)], dim=1))
        return torch.sigmoid(self.head(x))

    def attention_maps(self) -> list[torch.Tensor]:
        """Gate activations from the latest forward pass, coarsest to finest."""
        if self.gates is None:
            raise NotAttentionModel(f"{self.config.arch!r} model has no attention gates")
        maps = [gate.last_map for gate in self.gates]
        if any(m is None for m in maps):
            raise NotAttentionModel("no forward pass has been run yet")
        return maps


def build_model(config: ModelConfig) -> SegmentationUNet:
    """Construct the network described by ``config``."""
    return SegmentationUNet(config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
