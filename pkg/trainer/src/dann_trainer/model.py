"""Encoder, class head, domain head and the gradient-reversal coupling.

The encoder mirrors the inference-side layer contract exactly: two 7-tap
1D convolution blocks (32 then 64 filters, each followed by batch norm
and 2x max pooling), a 64-unit LSTM over the remaining time steps,
global average pooling, and a dense projection to the 64-dimensional
embedding. Input preparation (carrier re-centering, sideband mixing,
16-sample smoothing, 16x decimation into 6 real channels) is part of the
recorded input spec so any runtime reproduces it bit-for-bit.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

EMBED_DIM = 64
N_CLASSES = 9

INPUT_SPEC = {
    "kind": "iq_sideband_mix",
    "sample_rate": 2e6,
    "length_raw": 2417,
    "mix_hz": 423750.0,
    "if_offset_hz": 150e3,
    "ma_window": 16,
    "decimation": 16,
    "length": 151,
    "channels": 6,
}


def prepare_input(samples: np.ndarray, spec: dict = INPUT_SPEC) -> np.ndarray:
    """Complex segment -> (channels, length) float array per the spec.

    Matches the documented weight-file input contract: re-centre the
    carrier, mix at 0 and -+subcarrier, smooth with a centred
    ``ma_window`` moving average (edge-replicated), decimate.
    """
    x = np.asarray(samples)
    if len(x) != spec["length_raw"]:
        raise ValueError(f"segment length {len(x)} != {spec['length_raw']}")
    t = np.arange(len(x)) / spec["sample_rate"]
    x = x * np.exp(-2j * np.pi * spec["if_offset_hz"] * t)
    w = spec["ma_window"]
    left, right = w // 2, w - w // 2 - 1
    rows = []
    for sign in (0.0, -1.0, +1.0):
        s = x * np.exp(2j * np.pi * sign * spec["mix_hz"] * t)
        padded = np.concatenate([np.full(left, s[0]), s,
                                 np.full(right, s[-1])])
        kernel = np.ones(w) / w
        sm = np.convolve(padded, kernel, mode="valid")
        sm = sm[::spec["decimation"]][:spec["length"]]
        rows.extend([sm.real, sm.imag])
    return np.stack(rows).astype(np.float32)


class _GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, weight):
        ctx.weight = weight
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return -ctx.weight * grad, None


def gradient_reversal(x: torch.Tensor, weight: float) -> torch.Tensor:
    """Identity forward; backward gradient multiplied by -weight."""
    return _GradientReversal.apply(x, torch.tensor(float(weight)))


class PressEncoder(nn.Module):
    def __init__(self, channels: int = INPUT_SPEC["channels"],
                 hidden: int = EMBED_DIM):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, 32, kernel_size=7, padding=3)
        self.bn1 = nn.BatchNorm1d(32)
        self.pool1 = nn.MaxPool1d(2)
        self.conv2 = nn.Conv1d(32, 64, kernel_size=7, padding=3)
        self.bn2 = nn.BatchNorm1d(64)
        self.pool2 = nn.MaxPool1d(2)
        self.lstm = nn.LSTM(input_size=64, hidden_size=hidden,
                            batch_first=True)
        self.proj = nn.Linear(hidden, EMBED_DIM)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, channels, time)
        x = self.pool1(self.bn1(self.conv1(x)))
        x = self.pool2(self.bn2(self.conv2(x)))
        x, _ = self.lstm(x.transpose(1, 2))
        x = x.mean(dim=1)
        return self.proj(x)


class ClassHead(nn.Module):
    def __init__(self, n_classes: int = N_CLASSES):
        super().__init__()
        self.fc1 = nn.Linear(EMBED_DIM, 64)
        self.bn = nn.BatchNorm1d(64)
        self.fc2 = nn.Linear(64, n_classes)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.bn(torch.relu(self.fc1(z))))


class DomainHead(nn.Module):
    def __init__(self):
        super().__init__()
        self.fc1 = nn.Linear(EMBED_DIM, 128)
        self.drop = nn.Dropout(0.5)
        self.fc2 = nn.Linear(128, 64)
        self.fc3 = nn.Linear(64, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.fc1(z))
        h = self.drop(h)
        h = torch.relu(self.fc2(h))
        return self.fc3(h).squeeze(-1)  # logit of P(target | z)


class DannModel(nn.Module):
    """Encoder + class head + domain head behind a gradient reversal."""

    def __init__(self):
        super().__init__()
        self.encoder = PressEncoder()
        self.classifier = ClassHead()
        self.discriminator = DomainHead()

    def class_posterior(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.classifier(self.encoder(x)), dim=1)

    def domain_logit(self, z: torch.Tensor, grl_weight: float) -> torch.Tensor:
        return self.discriminator(gradient_reversal(z, grl_weight))
