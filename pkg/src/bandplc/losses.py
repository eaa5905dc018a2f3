"""Training objectives: spectral, time-domain, auxiliary, and adversarial.

All functions take torch tensors (numpy accepted) and return differentiable
scalar tensors. `combine` folds the pieces into the final generator objective
total = plcpa + mae + alpha * f0 + beta * linguistic + adv * (gan_g + metric_g)
and keeps every addend in the report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import frontend
from .frontend import StftConfig


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1     # f0 auxiliary weight
    beta: float = 1e-3     # linguistic-feature weight
    adv_weight: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.adv_weight) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    plcpa: float
    mae: float
    f0: float
    linguistic: float
    gan_g: float
    metric_g: float
    total: float

    CSV_FIELDS = ("plcpa", "mae", "f0", "linguistic", "gan_g", "metric_g", "total")

    def as_row(self):
        return [getattr(self, k) for k in self.CSV_FIELDS]


def _tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def _masked_mean(values: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return values.mean()
    mask = mask.to(values.dtype)
    return (values * mask).sum() / mask.sum().clamp_min(1.0)


def plcpa_from_compressed(est_c: torch.Tensor, ref_c: torch.Tensor,
                          amplitude_weight: float = 1.0, phase_weight: float = 1.0,
                          frame_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Power-law compressed phase-aware loss on (..., T, F, 2) compressed spectra.

    Amplitude term (|S|^p - |S_hat|^p)^2 plus phase-aware term
    ||S|^p e^{j ang S} - |S_hat|^p e^{j ang S_hat}|^2, averaged over bins.
    An optional per-frame mask restricts the average to flagged frames.
    """
    est_c, ref_c = _tensor(est_c), _tensor(ref_c)
    if est_c.shape != ref_c.shape:
        raise ValueError(f"shape mismatch {tuple(est_c.shape)} vs {tuple(ref_c.shape)}")
    est_mag = frontend.compressed_magnitude(est_c)
    ref_mag = frontend.compressed_magnitude(ref_c)
    amp = (est_mag - ref_mag) ** 2
    phase = ((est_c - ref_c) ** 2).sum(dim=-1)
    per_bin = amplitude_weight * amp + phase_weight * phase
    if frame_mask is not None:
        frame_mask = _tensor(frame_mask)[..., None].expand_as(per_bin)
    return _masked_mean(per_bin, frame_mask)


def plcpa_loss(est_spec, ref_spec, p: float = 0.3, amplitude_weight: float = 1.0,
               phase_weight: float = 1.0) -> torch.Tensor:
    """PLCPA loss between complex spectrograms (compression applied inside)."""
    est_spec, ref_spec = _tensor(est_spec), _tensor(ref_spec)
    if est_spec.shape != ref_spec.shape:
        raise ValueError(f"shape mismatch {tuple(est_spec.shape)} vs {tuple(ref_spec.shape)}")
    return plcpa_from_compressed(
        frontend.compress(est_spec, p), frontend.compress(ref_spec, p),
        amplitude_weight, phase_weight,
    )


def mae_time_loss(est, ref, sample_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean absolute sample difference between waveforms."""
    est, ref = _tensor(est), _tensor(ref)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch {tuple(est.shape)} vs {tuple(ref.shape)}")
    return _masked_mean((est - ref).abs(), _tensor(sample_mask) if sample_mask is not None else None)


def f0_loss(pred, target) -> torch.Tensor:
    """MAE over normalized f0 tracks; unvoiced frames contribute as 0-targets."""
    pred, target = _tensor(pred), _tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


class LogFilterbankProvider:
    """Deterministic built-in linguistic-feature provider.

    Log energies of 64 mel-spaced triangular filters over the wide band
    (0-8 kHz), computed from the same 960-point STFT the rest of the system
    uses. Stands in for a pretrained speech encoder while keeping the
    repository self-contained; any callable waveform -> (..., T, D) feature
    tensor can replace it.
    """

    name = "log-filterbank-64"

    def __init__(self, num_bands: int = 64, config: StftConfig | None = None,
                 floor: float = 1e-10):
        self.num_bands = num_bands
        self.config = config or StftConfig()
        self.floor = floor
        self._weights = torch.from_numpy(
            _triangular_filters(num_bands, self.config, upper_hz=8000.0)
        )

    def __call__(self, waveform) -> torch.Tensor:
        x = _tensor(waveform)
        spec = frontend.stft(x, self.config)
        power = spec.real ** 2 + spec.imag ** 2
        wide = power[..., :frontend.WIDE_BINS]
        weights = self._weights.to(wide.dtype)
        energies = wide @ weights.T
        return torch.log(energies.clamp_min(self.floor))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _triangular_filters(num_bands: int, config: StftConfig, upper_hz: float) -> np.ndarray:
    bin_hz = 48000.0 / config.fft_size
    edges_hz = _mel_to_hz(np.linspace(_hz_to_mel(0.0), _hz_to_mel(upper_hz), num_bands + 2))
    bins_hz = np.arange(frontend.WIDE_BINS) * bin_hz
    weights = np.zeros((num_bands, frontend.WIDE_BINS))
    for b in range(num_bands):
        lo, center, hi = edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]
        rising = (bins_hz - lo) / max(center - lo, 1e-9)
        falling = (hi - bins_hz) / max(hi - center, 1e-9)
        weights[b] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return weights


def linguistic_loss(est, ref, provider) -> torch.Tensor:
    """MAE between provider features of estimate and reference."""
    try:
        est_feat = provider(est)
        ref_feat = provider(ref)
    except Exception as exc:
        name = getattr(provider, "name", provider.__class__.__name__)
        raise RuntimeError(f"linguistic feature provider {name!r} failed: {exc}") from exc
    if est_feat.shape != ref_feat.shape:
        raise ValueError(
            f"provider feature shapes differ: {tuple(est_feat.shape)} vs {tuple(ref_feat.shape)}"
        )
    return (est_feat - ref_feat).abs().mean()


def lsgan_g_loss(fake_scores) -> torch.Tensor:
    """Generator side of least-squares GAN: mean over maps of mean (D(fake) - 1)^2."""
    if not fake_scores:
        raise ValueError("no score maps")
    terms = [((_tensor(s) - 1.0) ** 2).mean() for s in fake_scores]
    return torch.stack(terms).mean()


def lsgan_d_loss(real_scores, fake_scores) -> torch.Tensor:
    """Discriminator side: mean over maps of [mean (D(real) - 1)^2 + mean D(fake)^2]."""
    if not real_scores or not fake_scores:
        raise ValueError("no score maps")
    if len(real_scores) != len(fake_scores):
        raise ValueError("real/fake score map counts differ")
    terms = [((_tensor(r) - 1.0) ** 2).mean() + (_tensor(f) ** 2).mean()
             for r, f in zip(real_scores, fake_scores)]
    return torch.stack(terms).mean()


def metricgan_g_loss(metric_d_score) -> torch.Tensor:
    """(D(est, clean) - 1)^2: push the predicted metric toward its maximum."""
    return ((_tensor(metric_d_score) - 1.0) ** 2).mean()


def metricgan_d_loss(score_clean_pair, score_est_pair, q_est) -> torch.Tensor:
    """(D(clean, clean) - 1)^2 + (D(est, clean) - Q(est, clean))^2."""
    clean_term = (_tensor(score_clean_pair) - 1.0) ** 2
    est_term = (_tensor(score_est_pair) - _tensor(q_est)) ** 2
    return clean_term.mean() + est_term.mean()


def combine(plcpa, mae, f0, linguistic, gan_g, metric_g,
            weights: LossWeights = LossWeights()) -> LossReport:
    """Fold the terms per the final multi-loss; rejects non-finite inputs by name."""
    values = {}
    for name, value in (("plcpa", plcpa), ("mae", mae), ("f0", f0),
                        ("linguistic", linguistic), ("gan_g", gan_g),
                        ("metric_g", metric_g)):
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not np.isfinite(v):
            raise ValueError(f"loss term {name!r} is not finite: {v}")
        values[name] = v
    total = (values["plcpa"] + values["mae"] + weights.alpha * values["f0"]
             + weights.beta * values["linguistic"]
             + weights.adv_weight * (values["gan_g"] + values["metric_g"]))
    return LossReport(total=total, **values)
