"""STFT analysis/synthesis, power-law compression, and wide/high band routing.

Frames are 960 samples (20 ms at 48 kHz) with a 480-sample hop and a
square-root Hann window on both sides, which gives perfect reconstruction at
50% overlap. The signal is zero-padded on the left by one hop so that frame
``t`` only ever sees samples before ``(t + 1) * hop``: one 20 ms packet spans
exactly two hops and no frame reads past the end of its packet.

All functions accept numpy arrays or torch tensors (with optional leading
batch dimensions) and return torch tensors; computations are differentiable
so the synthesis path can sit inside a training graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

NUM_BINS = 481
WIDE_BINS = 161  # bins 0..160 cover 0-8 kHz (the 8 kHz bin belongs to the wide band)
HIGH_BINS = 320  # bins 161..480 cover 8.05-24 kHz


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 960
    win_length: int = 960
    hop: int = 480
    compression_exponent: float = 0.3

    def __post_init__(self):
        if self.win_length != self.fft_size:
            raise ValueError("win_length must equal fft_size")
        if self.hop * 2 != self.win_length:
            raise ValueError("hop must be win_length / 2")
        if not 0.0 < self.compression_exponent <= 1.0:
            raise ValueError("compression exponent must lie in (0, 1]")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class BandPair:
    """Compressed spectra split at the 8 kHz bin: wide (..., T, 161, 2), high (..., T, 320, 2)."""

    wide: torch.Tensor
    high: torch.Tensor

    def __post_init__(self):
        if self.wide.shape[-1] != 2 or self.high.shape[-1] != 2:
            raise ValueError("band tensors must have a trailing real/imag axis of size 2")
        if self.wide.shape[:-2] != self.high.shape[:-2]:
            raise ValueError("wide and high bands disagree on leading shape")

    @property
    def num_frames(self) -> int:
        return int(self.wide.shape[-3])


def _as_float_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        t = x
    else:
        t = torch.as_tensor(np.asarray(x))
    if not t.is_floating_point():
        t = t.to(torch.float64)
    return t


def sqrt_hann_window(win_length: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Square root of the periodic Hann window (COLA-1 at 50% overlap)."""
    n = torch.arange(win_length, dtype=dtype, device=device)
    hann = 0.5 - 0.5 * torch.cos(2.0 * math.pi * n / win_length)
    return torch.sqrt(hann)


def num_frames(num_samples: int, config: StftConfig = StftConfig()) -> int:
    return -(-num_samples // config.hop)


def stft(samples, config: StftConfig = StftConfig()) -> torch.Tensor:
    """Analysis: (..., N) real -> (..., T, num_bins) complex with T = ceil(N / hop)."""
    x = _as_float_tensor(samples)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("cannot take the STFT of an empty signal")
    if n < config.win_length:
        raise ValueError(f"signal length {n} is shorter than one window ({config.win_length})")
    t_frames = num_frames(n, config)
    pad_right = t_frames * config.hop - n
    x = F.pad(x, (config.hop, pad_right))
    frames = x.unfold(-1, config.win_length, config.hop)
    window = sqrt_hann_window(config.win_length, dtype=x.dtype, device=x.device)
    return torch.fft.rfft(frames * window, n=config.fft_size, dim=-1)


def istft(spec, config: StftConfig = StftConfig(), length: int | None = None) -> torch.Tensor:
    """Synthesis: (..., T, num_bins) complex -> (..., T * hop) real.

    Exact inverse of :func:`stft` everywhere except the last hop, which only
    one window covers and which fades out under the floored normalization.
    """
    s = torch.as_tensor(spec) if not isinstance(spec, torch.Tensor) else spec
    if s.shape[-1] != config.num_bins:
        raise ValueError(f"expected {config.num_bins} bins, got {s.shape[-1]}")
    if s.dim() < 2:
        raise ValueError("spectrogram must have shape (..., T, num_bins)")
    if not s.is_complex():
        s = s.to(torch.complex128)
    lead = s.shape[:-2]
    t_frames = s.shape[-2]
    window = sqrt_hann_window(
        config.win_length,
        dtype=torch.float64 if s.dtype == torch.complex128 else torch.float32,
        device=s.device,
    )
    frames = torch.fft.irfft(s, n=config.fft_size, dim=-1) * window
    total = (t_frames - 1) * config.hop + config.win_length
    flat = frames.reshape(-1, t_frames, config.win_length).transpose(1, 2)
    ola = F.fold(flat, output_size=(1, total), kernel_size=(1, config.win_length),
                 stride=(1, config.hop)).reshape(flat.shape[0], total)
    wsq = (window * window).expand(flat.shape[0], t_frames, -1).transpose(1, 2)
    den = F.fold(wsq, output_size=(1, total), kernel_size=(1, config.win_length),
                 stride=(1, config.hop)).reshape(flat.shape[0], total)
    # Interior window sums are exactly 1; the single-coverage tail decays to 0.
    # Flooring the denominator attenuates that tail instead of amplifying
    # inconsistent (modified) spectra by up to 1/den there.
    out = ola / den.clamp_min(0.5)
    out = out[:, config.hop:config.hop + t_frames * config.hop]
    out = out.reshape(*lead, t_frames * config.hop)
    if length is not None:
        if length > t_frames * config.hop:
            raise ValueError(f"requested length {length} exceeds synthesized {t_frames * config.hop}")
        out = out[..., :length]
    return out


def compress(spec, p: float = 0.3) -> torch.Tensor:
    """Power-law compress a complex spectrogram: |S|^p * e^(j angle S) as (..., 2) real.

    Zero magnitude maps to (0, 0); phase is preserved wherever |S| > 0.
    """
    s = torch.as_tensor(spec) if not isinstance(spec, torch.Tensor) else spec
    if not s.is_complex():
        raise ValueError("compress expects a complex spectrogram")
    if not 0.0 < p <= 1.0:
        raise ValueError("compression exponent must lie in (0, 1]")
    mag = s.abs()
    nonzero = mag > 0
    scale = torch.where(nonzero, mag, torch.ones_like(mag)).pow(p - 1.0)
    zero = torch.zeros_like(mag)
    re = torch.where(nonzero, s.real * scale, zero)
    im = torch.where(nonzero, s.imag * scale, zero)
    return torch.stack((re, im), dim=-1)


def decompress(compressed, p: float = 0.3) -> torch.Tensor:
    """Exact inverse of :func:`compress`: (..., 2) real -> complex spectrogram."""
    c = _as_float_tensor(compressed)
    if c.shape[-1] != 2:
        raise ValueError("compressed spectra must have a trailing axis of size 2")
    if not 0.0 < p <= 1.0:
        raise ValueError("compression exponent must lie in (0, 1]")
    a, b = c[..., 0], c[..., 1]
    cmag = torch.sqrt(a * a + b * b)
    nonzero = cmag > 0
    scale = torch.where(nonzero, cmag, torch.ones_like(cmag)).pow(1.0 / p - 1.0)
    zero = torch.zeros_like(cmag)
    re = torch.where(nonzero, a * scale, zero)
    im = torch.where(nonzero, b * scale, zero)
    return torch.complex(re, im)


def compressed_magnitude(compressed) -> torch.Tensor:
    """|S|^p recovered from a compressed real/imag pair (gradient-safe at 0)."""
    c = _as_float_tensor(compressed)
    if c.shape[-1] != 2:
        raise ValueError("compressed spectra must have a trailing axis of size 2")
    sq = c[..., 0] ** 2 + c[..., 1] ** 2
    return torch.sqrt(sq + torch.finfo(c.dtype).tiny)


def band_split(compressed) -> BandPair:
    """Split (..., T, 481, 2) at the 8 kHz boundary; bin 160 goes to the wide band."""
    c = _as_float_tensor(compressed)
    if c.shape[-1] != 2 or c.shape[-2] != NUM_BINS:
        raise ValueError(f"expected (..., T, {NUM_BINS}, 2), got {tuple(c.shape)}")
    return BandPair(wide=c[..., :WIDE_BINS, :], high=c[..., WIDE_BINS:, :])


def band_merge(pair: BandPair) -> torch.Tensor:
    """Concatenate wide and high back to (..., T, 481, 2); exact inverse of band_split."""
    if pair.wide.shape[-2] != WIDE_BINS or pair.high.shape[-2] != HIGH_BINS:
        raise ValueError(
            f"expected {WIDE_BINS}+{HIGH_BINS} bins, got {pair.wide.shape[-2]}+{pair.high.shape[-2]}"
        )
    return torch.cat((pair.wide, pair.high), dim=-2)


def analyze(samples, config: StftConfig = StftConfig()) -> BandPair:
    """Waveform -> compressed band pair (stft, compress, split in one go)."""
    return band_split(compress(stft(samples, config), config.compression_exponent))


def synthesize(pair: BandPair, config: StftConfig = StftConfig(),
               length: int | None = None) -> torch.Tensor:
    """Compressed band pair -> waveform (merge, decompress, istft)."""
    return istft(decompress(band_merge(pair), config.compression_exponent), config, length)
