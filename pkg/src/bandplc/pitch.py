"""Frame-synchronous fundamental-frequency targets from clean speech.

YIN-style estimator: cumulative-mean-normalized difference function over a
40 ms correlation window per 10 ms frame, absolute-threshold candidate search
(prefers the shortest credible period, which guards against octave halving),
parabolic refinement to sub-sample lag. Frames whose periodicity confidence
falls below the voicing threshold report 0.0 Hz.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.fft import next_fast_len

from .audio import SAMPLE_RATE, Waveform

# Absolute threshold on the normalized difference function used during the
# candidate search; separate from the caller-facing voicing decision.
_SEARCH_THRESHOLD = 0.15


def extract_f0(waveform, sample_rate: int = SAMPLE_RATE, frame_hop: int = 480,
               f0_min: float = 50.0, f0_max: float = 500.0,
               voicing_threshold: float = 0.5) -> np.ndarray:
    """Per-frame f0 in Hz aligned to the 10 ms STFT grid; 0.0 marks unvoiced.

    Output length is ceil(len / frame_hop), matching the spectrogram frame
    count for the same signal.
    """
    if isinstance(waveform, Waveform):
        x = waveform.samples
        sample_rate = waveform.sample_rate
    else:
        x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("expected a non-empty 1-D signal")
    if not 0.0 < f0_min < f0_max:
        raise ValueError("need 0 < f0_min < f0_max")

    tau_min = int(sample_rate // f0_max)
    tau_max = int(-(-sample_rate // f0_min))
    window = 2 * tau_max
    seg = window + tau_max
    t_frames = -(-x.size // frame_hop)

    padded = np.zeros((t_frames - 1) * frame_hop + seg, dtype=np.float64)
    padded[:x.size] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, seg)[::frame_hop]
    frames = np.ascontiguousarray(frames[:t_frames])

    # Difference function d(tau) = sum_{j<W} (x[j] - x[j+tau])^2 via FFT correlation
    nfft = next_fast_len(seg)
    spec_all = np.fft.rfft(frames, nfft, axis=1)
    spec_head = np.fft.rfft(frames[:, :window], nfft, axis=1)
    corr = np.fft.irfft(spec_all * np.conj(spec_head), nfft, axis=1)[:, :tau_max + 1]
    csum = np.concatenate(
        [np.zeros((t_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    e_head = csum[:, window] - csum[:, 0]
    e_lag = csum[:, window:window + tau_max + 1] - csum[:, :tau_max + 1]
    diff = np.maximum(e_head[:, None] + e_lag - 2.0 * corr, 0.0)

    # Cumulative-mean normalization; silent frames normalize to 1 (unvoiced)
    denom = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmndf = diff[:, 1:] * np.arange(1, tau_max + 1) / denom
    cmndf = np.where(denom > 0, cmndf, 1.0)
    cmndf = np.concatenate([np.ones((t_frames, 1)), cmndf], axis=1)

    f0 = np.zeros(t_frames, dtype=np.float64)
    for t in range(t_frames):
        dp = cmndf[t]
        below = np.nonzero(dp[tau_min:tau_max + 1] < _SEARCH_THRESHOLD)[0]
        if below.size:
            lag = int(below[0]) + tau_min
            while lag + 1 <= tau_max and dp[lag + 1] < dp[lag]:
                lag += 1
        else:
            lag = tau_min + int(np.argmin(dp[tau_min:tau_max + 1]))
        confidence = max(0.0, 1.0 - dp[lag])
        if confidence < voicing_threshold:
            continue
        refined = lag + _parabolic_offset(dp, lag, tau_max)
        f0[t] = float(np.clip(sample_rate / refined, f0_min, f0_max))
    return f0


def _parabolic_offset(dp: np.ndarray, lag: int, tau_max: int) -> float:
    if lag <= 1 or lag >= tau_max:
        return 0.0
    left, mid, right = dp[lag - 1], dp[lag], dp[lag + 1]
    denom = left - 2.0 * mid + right
    if abs(denom) < 1e-12:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def normalize_f0(f0: np.ndarray, f0_max: float = 500.0) -> np.ndarray:
    """Map Hz to [0, 1] by f0_max; unvoiced frames stay 0."""
    return np.asarray(f0, dtype=np.float64) / f0_max


def f0_cache_path(wav_path) -> Path:
    return Path(wav_path).with_suffix(".f0")


def load_or_extract_f0(wav_path, samples: np.ndarray | None = None, **kwargs) -> np.ndarray:
    """Whole-file f0 with a binary sidecar cache (little-endian float32, `.f0`)."""
    cache = f0_cache_path(wav_path)
    if cache.exists():
        return np.fromfile(cache, dtype="<f4").astype(np.float64)
    if samples is None:
        from .audio import read_wav

        samples = read_wav(wav_path).samples
    stored = extract_f0(samples, **kwargs).astype("<f4")
    stored.tofile(cache)
    # return what a cache hit would return, so fresh and cached paths agree
    return stored.astype(np.float64)
