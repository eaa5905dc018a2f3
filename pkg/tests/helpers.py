"""Shared test utilities: independent oracles and synthetic corpora."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from bandplc.audio import Waveform, write_wav
from bandplc.generator import GeneratorConfig

SR = 48000


def analytic_param_count(cfg: GeneratorConfig) -> int:
    """Parameter count derived from the architecture description alone.

    Kept independent of torch module introspection so it can serve as an
    oracle for count_parameters().
    """
    total = 0
    chans = cfg.encoder_channels
    prev = 3 if cfg.include_loss_flag_input else 2
    for ch in chans:
        total += (2 * ch) * prev * 2 * 5 + 2 * ch  # gated conv, kernel (2, 5)
        prev = ch
    c = chans[-1]
    hidden = c * cfg.tfdcm_expansion
    for _ in cfg.tfdcm_dilations:
        total += hidden * c + hidden            # pointwise in
        total += hidden * 2 * 3 + hidden        # depthwise (2, 3)
        total += (2 * c) * hidden + 2 * c       # gated pointwise out
    h = cfg.ftlstm_hidden
    total += 2 * (4 * h * c + 4 * h * h + 8 * h)  # bidirectional frequency LSTM
    total += c * (2 * h) + c                       # frequency projection
    total += 4 * h * c + 4 * h * h + 8 * h         # causal time LSTM
    total += c * h + c                             # time projection
    fq = cfg.encoder_freqs[-1]
    total += (2 * c) * c + 2 * c                   # FiLM scale/shift linear
    g = cfg.f0_head_hidden
    total += 3 * g * (fq * c) + 3 * g * g + 6 * g  # f0 GRU
    total += g + 1                                  # f0 output linear
    dec_in = (2 * chans[3], 2 * chans[2], 2 * chans[1], 2 * chans[0])
    dec_conv_out = (2 * chans[2], 2 * chans[1], 2 * chans[0], 2)
    for i, o in zip(dec_in, dec_conv_out):
        total += o * i * 2 * 5 + o                 # transposed conv, kernel (2, 5)
    hb = cfg.highband_channels
    gh = cfg.highband_gru_hidden
    total += hb * 2 * 2 * 320 + hb                 # high-band input conv (2, 320)
    total += 2 * hb                                # batch norm affine
    total += 3 * gh * hb + 3 * gh * gh + 6 * gh    # high-band GRU
    total += (2 * 320) * gh + 2 * 320              # high-band projection
    return total


def harmonic_clip(rng: np.random.Generator, seconds: float, f0: float,
                  noise: float = 0.003, phase_offset: float = 0.0) -> np.ndarray:
    """Speech-like test signal: three vibrato harmonics under a slow envelope."""
    n = int(round(seconds * SR))
    t = np.arange(n) / SR
    vib = f0 * (1 + 0.01 * np.sin(2 * np.pi * 3 * t))
    phase = 2 * np.pi * np.cumsum(vib) / SR
    sig = 0.35 * np.sin(phase) + 0.18 * np.sin(2 * phase) + 0.08 * np.sin(3 * phase)
    env = 0.4 + 0.6 * np.abs(np.sin(2 * np.pi * 1.7 * t + phase_offset))
    sig = sig * env + noise * rng.normal(size=n)
    return np.clip(sig, -1.0, 1.0)


def write_overfit_corpus(root: Path) -> Path:
    """The frozen 20-clip, 1-second corpus used by the convergence tests."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(42)
    for i in range(20):
        sig = harmonic_clip(rng, 1.0, f0=110 + 12 * i, noise=0.003, phase_offset=float(i))
        write_wav(root / f"clip{i:02d}.wav", Waveform(sig))
    return root


def write_speech_corpus(root: Path, num_files: int = 6, seed: int = 1) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(num_files):
        seconds = 1.2 + 0.3 * i
        sig = harmonic_clip(rng, seconds, f0=120 + 25 * i, noise=0.004, phase_offset=0.5 * i)
        write_wav(root / f"utt{i}.wav", Waveform(sig))
    return root
