"""The three discriminator families used during adversarial training.

* MPD (time-domain multi-period): the waveform is folded into a (length/p, p)
  plane per period and judged by strided Conv2d stacks.
* MFD (time-frequency multi-resolution): magnitude spectrograms at several
  window lengths (hop = window/4), each judged by a strided Conv2d stack.
* MetricDiscriminator: predicts a normalized quality metric
  Q(enhanced, clean) from paired magnitude spectrograms, so the generator
  can optimize the metric directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import Waveform


@dataclass(frozen=True)
class MpdConfig:
    periods: tuple = (2, 3, 5, 7, 11)
    channels: tuple = (16, 32, 64, 128, 128)

    def __post_init__(self):
        ps = self.periods
        if any(p <= 0 for p in ps):
            raise ValueError("periods must be positive")
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                if math.gcd(ps[i], ps[j]) != 1:
                    raise ValueError(f"periods must be pairwise coprime, got {ps[i]},{ps[j]}")


@dataclass(frozen=True)
class MfdConfig:
    window_lengths: tuple = (240, 480, 960, 1920)
    channels: tuple = (16, 32, 64, 128)

    def __post_init__(self):
        ws = self.window_lengths
        if any(w <= 0 for w in ws) or list(ws) != sorted(set(ws)):
            raise ValueError("window lengths must be positive and strictly increasing")

    def hop(self, window: int) -> int:
        return window // 4


@dataclass
class DiscriminatorOutput:
    score_maps: list
    feature_maps: list  # one list of intermediate activations per sub-discriminator


def _as_batched_wave(x) -> torch.Tensor:
    if isinstance(x, Waveform):
        x = x.samples
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))
    if not t.is_floating_point():
        t = t.to(torch.float32)
    if t.dim() == 1:
        t = t[None, :]
    if t.dim() != 2:
        raise ValueError(f"expected (N,) or (B, N) waveform, got shape {tuple(t.shape)}")
    return t


def fold_waveform(wave: torch.Tensor, period: int) -> torch.Tensor:
    """Right-pad (B, N) with zeros to a multiple of `period`, fold to
    (B, 1, ceil(N / period), period)."""
    b, n = wave.shape
    pad = (-n) % period
    return F.pad(wave, (0, pad)).view(b, 1, (n + pad) // period, period)


class PeriodDiscriminator(nn.Module):
    """Single-period sub-discriminator: fold to (len/p, p), then 5 strided convs."""

    def __init__(self, period: int, channels=(16, 32, 64, 128, 128)):
        super().__init__()
        self.period = period
        convs = []
        in_ch = 1
        for i, out_ch in enumerate(channels):
            stride = (3, 1) if i < len(channels) - 1 else (1, 1)
            convs.append(nn.Conv2d(in_ch, out_ch, (5, 1), stride=stride, padding=(2, 0)))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.head = nn.Conv2d(in_ch, 1, (3, 1), padding=(1, 0))

    def forward(self, wave: torch.Tensor):
        x = fold_waveform(wave, self.period)
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            fmaps.append(x)
        return self.head(x), fmaps


class MultiPeriodDiscriminator(nn.Module):
    def __init__(self, config: MpdConfig | None = None):
        super().__init__()
        self.config = config or MpdConfig()
        self.subs = nn.ModuleList(
            PeriodDiscriminator(p, self.config.channels) for p in self.config.periods
        )

    def forward(self, wave) -> DiscriminatorOutput:
        x = _as_batched_wave(wave)
        if x.shape[-1] < max(self.config.periods):
            raise ValueError(
                f"segment of {x.shape[-1]} samples is shorter than the largest period"
            )
        scores, features = [], []
        for sub in self.subs:
            s, f = sub(x)
            scores.append(s)
            features.append(f)
        return DiscriminatorOutput(scores, features)


def _magnitude_spectrogram(wave: torch.Tensor, window: int, hop: int) -> torch.Tensor:
    """Hann-windowed magnitude frames, no centering: (B, T, window//2 + 1)."""
    win = torch.hann_window(window, periodic=True, dtype=wave.dtype, device=wave.device)
    frames = wave.unfold(-1, window, hop)
    spec = torch.fft.rfft(frames * win, dim=-1)
    return torch.sqrt(spec.real ** 2 + spec.imag ** 2 + torch.finfo(wave.dtype).tiny)


class FrequencyDiscriminator(nn.Module):
    """Single-resolution sub-discriminator over a magnitude spectrogram."""

    def __init__(self, window: int, hop: int, channels=(16, 32, 64, 128)):
        super().__init__()
        self.window = window
        self.hop = hop
        convs = []
        in_ch = 1
        for out_ch in channels:
            convs.append(nn.Conv2d(in_ch, out_ch, (3, 3), stride=(2, 2), padding=(1, 1)))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.head = nn.Conv2d(in_ch, 1, (3, 3), padding=(1, 1))

    def forward(self, wave: torch.Tensor):
        x = _magnitude_spectrogram(wave, self.window, self.hop)[:, None]
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            fmaps.append(x)
        return self.head(x), fmaps


class MultiFrequencyDiscriminator(nn.Module):
    def __init__(self, config: MfdConfig | None = None):
        super().__init__()
        self.config = config or MfdConfig()
        self.subs = nn.ModuleList(
            FrequencyDiscriminator(w, self.config.hop(w), self.config.channels)
            for w in self.config.window_lengths
        )

    def forward(self, wave) -> DiscriminatorOutput:
        x = _as_batched_wave(wave)
        if x.shape[-1] < max(self.config.window_lengths):
            raise ValueError(
                f"segment of {x.shape[-1]} samples is shorter than the largest window"
            )
        scores, features = [], []
        for sub in self.subs:
            s, f = sub(x)
            scores.append(s)
            features.append(f)
        return DiscriminatorOutput(scores, features)


class MetricDiscriminator(nn.Module):
    """Predicts the normalized target metric from (enhanced, clean) magnitudes."""

    def __init__(self, channels=(16, 32, 64)):
        super().__init__()
        convs = []
        in_ch = 2
        for out_ch in channels:
            convs.append(nn.Conv2d(in_ch, out_ch, (3, 3), stride=(2, 2), padding=(1, 1)))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.proj = nn.Linear(in_ch, 1)

    def forward(self, enhanced_mag, clean_mag) -> torch.Tensor:
        e = enhanced_mag if isinstance(enhanced_mag, torch.Tensor) else torch.as_tensor(np.asarray(enhanced_mag))
        c = clean_mag if isinstance(clean_mag, torch.Tensor) else torch.as_tensor(np.asarray(clean_mag))
        if e.shape != c.shape:
            raise ValueError(f"shape mismatch {tuple(e.shape)} vs {tuple(c.shape)}")
        squeeze = e.dim() == 2
        if squeeze:
            e, c = e[None], c[None]
        if e.dim() != 3:
            raise ValueError("expected (T, F) or (B, T, F) magnitude spectrograms")
        dtype = next(self.parameters()).dtype
        x = torch.stack((e, c), dim=1).to(dtype)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
        pooled = x.mean(dim=(2, 3))
        score = torch.sigmoid(self.proj(pooled)).squeeze(-1)
        return score[0] if squeeze else score


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB; +inf for a perfect
    (up to scale) estimate."""
    est = estimate.samples if isinstance(estimate, Waveform) else np.asarray(estimate, dtype=np.float64)
    ref = reference.samples if isinstance(reference, Waveform) else np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch {est.shape} vs {ref.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    scale = float(np.dot(est, ref)) / ref_energy
    target = scale * ref
    noise = est - target
    target_energy = float(np.dot(target, target))
    noise_energy = float(np.dot(noise, noise))
    if noise_energy <= target_energy * 1e-30:
        return math.inf
    if target_energy == 0.0:
        return -math.inf
    return 10.0 * math.log10(target_energy / noise_energy)


def target_metric_q(estimate, reference) -> float:
    """Default pluggable quality metric: SI-SDR mapped to [0, 1] via (x+10)/30."""
    value = si_sdr(estimate, reference)
    if math.isinf(value):
        return 1.0 if value > 0 else 0.0
    return float(np.clip((value + 10.0) / 30.0, 0.0, 1.0))
