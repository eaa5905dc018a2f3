"""Band-split concealment generator.

Wide band (0-8 kHz, 161 bins): gated Conv2d encoder (4 stages, kernel (2, 5),
frequency stride 2, causal in time), a stack of time-dilated depthwise conv
blocks, an F-T-LSTM bottleneck (bidirectional across the 11 remaining
frequency positions, causal across time), and a mirrored gated transposed-conv
decoder with skip concatenation. High band (8-24 kHz, 320 bins): a light
Conv2d + ELU + BatchNorm + GRU + linear stack. An f0 head conditions the
bottleneck with per-frequency affine modulation (scale/shift predicted from a
causal running mean) and emits one sigmoid value per frame.

Every path is causal: batch `forward` and per-frame `streaming_step` compute
the same function, which the tests pin down bit-for-bit (causality) and to
1e-5 (streaming equivalence).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .frontend import HIGH_BINS, WIDE_BINS, BandPair, band_merge

CHECKPOINT_VERSION = 1
CHECKPOINT_KIND = "bandplc-generator"


class CheckpointError(ValueError):
    """Raised for unreadable, mismatched, or wrong-version checkpoints."""


@dataclass(frozen=True)
class GeneratorConfig:
    preset: str = "toy"
    encoder_channels: tuple = (8, 16, 24, 32)
    freq_strides: tuple = (2, 2, 2, 2)
    tfdcm_dilations: tuple = (1, 2, 4, 8)
    tfdcm_expansion: int = 2
    ftlstm_hidden: int = 32
    highband_channels: int = 128
    highband_gru_hidden: int = 128
    f0_head_hidden: int = 32
    include_loss_flag_input: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "freq_strides", tuple(self.freq_strides))
        object.__setattr__(self, "tfdcm_dilations", tuple(self.tfdcm_dilations))
        if len(self.encoder_channels) != 4 or len(self.freq_strides) != 4:
            raise ValueError("the wide path has exactly 4 encoder and 4 decoder stages")
        if any(s != 2 for s in self.freq_strides):
            raise ValueError("frequency stride must be 2 per stage")
        dims = (*self.encoder_channels, self.tfdcm_expansion, self.ftlstm_hidden,
                self.highband_channels, self.highband_gru_hidden, self.f0_head_hidden)
        if any(d < 1 for d in dims) or any(d < 1 for d in self.tfdcm_dilations):
            raise ValueError("all dimensions must be >= 1")

    @property
    def input_channels(self) -> int:
        return 3 if self.include_loss_flag_input else 2

    @property
    def encoder_freqs(self) -> tuple:
        """Frequency sizes entering each encoder stage, then the bottleneck size."""
        freqs = [WIDE_BINS]
        for _ in self.encoder_channels:
            freqs.append((freqs[-1] - 1) // 2 + 1)
        return tuple(freqs)  # (161, 81, 41, 21, 11)

    @classmethod
    def toy(cls, **overrides) -> "GeneratorConfig":
        return cls(preset="toy", **overrides)

    @classmethod
    def base(cls, **overrides) -> "GeneratorConfig":
        defaults = dict(
            preset="base", encoder_channels=(16, 32, 64, 96), tfdcm_expansion=4,
            ftlstm_hidden=128, f0_head_hidden=64,
        )
        defaults.update(overrides)
        return cls(**defaults)

    @classmethod
    def for_preset(cls, name: str, **overrides) -> "GeneratorConfig":
        if name == "toy":
            return cls.toy(**overrides)
        if name == "base":
            return cls.base(**overrides)
        raise ValueError(f"unknown preset {name!r}; expected 'toy' or 'base'")


@dataclass
class GeneratorOutput:
    full_band_compressed: torch.Tensor  # (..., T, 481, 2)
    f0_pred: torch.Tensor               # (..., T) in [0, 1]


@dataclass
class GeneratorState:
    """Everything a single causal stream carries between frames."""

    enc_prev: list
    tfdcm_bufs: list
    t_lstm: Optional[tuple]
    dec_prev: list
    film_sum: torch.Tensor
    film_count: int
    f0_gru: Optional[torch.Tensor]
    high_prev: torch.Tensor
    high_gru: Optional[torch.Tensor]
    lost_run: int = 0


class GatedConv2d(nn.Module):
    """Causal-in-time gated convolution, kernel (2, 5), frequency stride 2."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, 2 * out_ch, (2, 5), stride=(1, 2), padding=(0, 2))

    def forward(self, x, prev=None):
        if prev is None:
            xp = F.pad(x, (0, 0, 1, 0))
        else:
            xp = torch.cat((prev, x), dim=2)
        return F.glu(self.conv(xp), dim=1), xp[:, :, -1:, :]


class GatedDeconv2d(nn.Module):
    """Causal transposed convolution mirroring GatedConv2d; last stage is linear."""

    def __init__(self, in_ch: int, out_ch: int, gated: bool = True):
        super().__init__()
        self.gated = gated
        mult = 2 if gated else 1
        self.conv = nn.ConvTranspose2d(in_ch, mult * out_ch, (2, 5), stride=(1, 2),
                                       padding=(0, 2))

    def forward(self, x, prev=None):
        t = x.shape[2]
        if prev is None:
            y = self.conv(x)[:, :, :t, :]
        else:
            y = self.conv(torch.cat((prev, x), dim=2))[:, :, 1:t + 1, :]
        if self.gated:
            y = F.glu(y, dim=1)
        return y, x[:, :, -1:, :]


class TfdcmBlock(nn.Module):
    """Time-dilated depthwise conv block with gated output and residual."""

    def __init__(self, ch: int, dilation: int, expansion: int):
        super().__init__()
        hidden = ch * expansion
        self.dilation = dilation
        self.inp = nn.Conv2d(ch, hidden, 1)
        self.depth = nn.Conv2d(hidden, hidden, (2, 3), dilation=(dilation, 1),
                               padding=(0, 1), groups=hidden)
        self.out = nn.Conv2d(hidden, 2 * ch, 1)

    def forward(self, x, buf=None):
        h = F.elu(self.inp(x))
        if buf is None:
            hp = F.pad(h, (0, 0, self.dilation, 0))
        else:
            hp = torch.cat((buf, h), dim=2)
        d = F.elu(self.depth(hp))
        y = F.glu(self.out(d), dim=1)
        return x + y, hp[:, :, -self.dilation:, :]


class FtLstm(nn.Module):
    """Bidirectional recurrence over frequency positions, then causal over time."""

    def __init__(self, ch: int, hidden: int):
        super().__init__()
        self.freq_lstm = nn.LSTM(ch, hidden, batch_first=True, bidirectional=True)
        self.freq_proj = nn.Linear(2 * hidden, ch)
        self.time_lstm = nn.LSTM(ch, hidden, batch_first=True)
        self.time_proj = nn.Linear(hidden, ch)

    def forward(self, x, state=None):
        b, c, t, fq = x.shape
        xf = x.permute(0, 2, 3, 1).reshape(b * t, fq, c)
        f, _ = self.freq_lstm(xf)
        x = x + self.freq_proj(f).reshape(b, t, fq, c).permute(0, 3, 1, 2)
        xt = x.permute(0, 3, 2, 1).reshape(b * fq, t, c)
        y, new_state = self.time_lstm(xt, state)
        x = x + self.time_proj(y).reshape(b, fq, t, c).permute(0, 3, 2, 1)
        return x, new_state


class F0Head(nn.Module):
    """Per-frequency affine modulation from causally pooled context, then GRU."""

    def __init__(self, ch: int, freq_positions: int, hidden: int):
        super().__init__()
        self.film = nn.Linear(ch, 2 * ch)
        self.gru = nn.GRU(ch * freq_positions, hidden, batch_first=True)
        self.out = nn.Linear(hidden, 1)

    def forward(self, x, film_sum=None, film_count=0, gru_state=None):
        b, c, t, fq = x.shape
        csum = x.cumsum(dim=2)
        if film_sum is not None:
            csum = csum + film_sum
        counts = torch.arange(film_count + 1, film_count + t + 1,
                              dtype=x.dtype, device=x.device)
        pooled = csum / counts.view(1, 1, t, 1)
        gamma, beta = self.film(pooled.permute(0, 2, 3, 1)).chunk(2, dim=-1)
        modulated = x.permute(0, 2, 3, 1) * gamma + beta
        h, new_gru = self.gru(modulated.reshape(b, t, fq * c), gru_state)
        f0 = torch.sigmoid(self.out(h)).squeeze(-1)
        return f0, csum[:, :, -1:, :], film_count + t, new_gru


class HighBandNet(nn.Module):
    """Lightweight high-band path: Conv2d -> ELU -> BatchNorm -> GRU -> linear."""

    def __init__(self, channels: int, gru_hidden: int, bins: int = HIGH_BINS):
        super().__init__()
        self.bins = bins
        self.conv_in = nn.Conv2d(2, channels, (2, bins))
        self.norm = nn.BatchNorm2d(channels)
        self.gru = nn.GRU(channels, gru_hidden, batch_first=True)
        self.proj = nn.Linear(gru_hidden, 2 * bins)

    def forward(self, high, prev=None, gru_state=None):
        x = high.permute(0, 3, 1, 2)  # (B, 2, T, bins)
        if prev is None:
            xp = F.pad(x, (0, 0, 1, 0))
        else:
            xp = torch.cat((prev, x), dim=2)
        h = self.norm(F.elu(self.conv_in(xp)))      # (B, ch, T, 1)
        h = h.squeeze(-1).permute(0, 2, 1)          # (B, T, ch)
        g, new_state = self.gru(h, gru_state)
        y = self.proj(g)
        b, t = y.shape[:2]
        return y.reshape(b, t, self.bins, 2), xp[:, :, -1:, :], new_state


class BandSplitGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        chans = config.encoder_channels
        ins = (config.input_channels, *chans[:-1])
        self.encoders = nn.ModuleList(
            GatedConv2d(i, o) for i, o in zip(ins, chans)
        )
        self.tfdcm = nn.ModuleList(
            TfdcmBlock(chans[-1], d, config.tfdcm_expansion)
            for d in config.tfdcm_dilations
        )
        self.bottleneck = FtLstm(chans[-1], config.ftlstm_hidden)
        self.f0_head = F0Head(chans[-1], config.encoder_freqs[-1], config.f0_head_hidden)
        dec_ins = (2 * chans[3], 2 * chans[2], 2 * chans[1], 2 * chans[0])
        dec_outs = (chans[2], chans[1], chans[0], 2)
        self.decoders = nn.ModuleList(
            GatedDeconv2d(i, o, gated=(n < 3))
            for n, (i, o) in enumerate(zip(dec_ins, dec_outs))
        )
        self.highband = HighBandNet(config.highband_channels, config.highband_gru_hidden)

    def _check_inputs(self, wide: torch.Tensor, high: torch.Tensor):
        if wide.shape[-2] != WIDE_BINS or wide.shape[-1] != 2:
            raise ValueError(f"wide band must be (..., T, {WIDE_BINS}, 2), got {tuple(wide.shape)}")
        if high.shape[-2] != HIGH_BINS or high.shape[-1] != 2:
            raise ValueError(f"high band must be (..., T, {HIGH_BINS}, 2), got {tuple(high.shape)}")
        if torch.isnan(wide).any() or torch.isnan(high).any():
            raise ValueError("NaN in generator input")

    def _flag_plane(self, loss_flags, b: int, t: int, ref: torch.Tensor) -> torch.Tensor:
        if loss_flags is None:
            flags = torch.zeros(b, t, dtype=ref.dtype, device=ref.device)
        else:
            flags = loss_flags if isinstance(loss_flags, torch.Tensor) else torch.as_tensor(loss_flags)
            flags = flags.to(dtype=ref.dtype, device=ref.device)
            if flags.dim() == 1:
                flags = flags[None, :]
            if flags.shape != (b, t):
                raise ValueError(f"loss flags must be ({b}, {t}), got {tuple(flags.shape)}")
        return flags[:, None, :, None].expand(b, 1, t, WIDE_BINS)

    def forward(self, bands: BandPair, loss_flags=None) -> GeneratorOutput:
        wide, high = bands.wide, bands.high
        squeeze = wide.dim() == 3
        if squeeze:
            wide, high = wide[None], high[None]
            if loss_flags is not None:
                loss_flags = torch.as_tensor(loss_flags)
                if loss_flags.dim() == 1:
                    loss_flags = loss_flags[None]
        self._check_inputs(wide, high)
        b, t = wide.shape[0], wide.shape[1]
        x = wide.permute(0, 3, 1, 2)
        if self.config.include_loss_flag_input:
            x = torch.cat((x, self._flag_plane(loss_flags, b, t, x)), dim=1)
        skips = []
        for enc in self.encoders:
            x, _ = enc(x)
            skips.append(x)
        for block in self.tfdcm:
            x, _ = block(x)
        x, _ = self.bottleneck(x)
        f0, _, _, _ = self.f0_head(x)
        y = x
        for i, dec in enumerate(self.decoders):
            y, _ = dec(torch.cat((y, skips[-1 - i]), dim=1))
        wide_out = y.permute(0, 2, 3, 1)
        high_out, _, _ = self.highband(high)
        full = band_merge(BandPair(wide=wide_out, high=high_out))
        if squeeze:
            return GeneratorOutput(full[0], f0[0])
        return GeneratorOutput(full, f0)

    def init_state(self, batch_size: int = 1, device=None, dtype=None) -> GeneratorState:
        p = next(self.parameters())
        device = device or p.device
        dtype = dtype or p.dtype
        cfg = self.config
        chans = cfg.encoder_channels
        freqs = cfg.encoder_freqs
        zeros = lambda *shape: torch.zeros(*shape, device=device, dtype=dtype)
        enc_ins = (cfg.input_channels, *chans[:-1])
        enc_prev = [zeros(batch_size, c, 1, f) for c, f in zip(enc_ins, freqs[:-1])]
        hidden = chans[-1] * cfg.tfdcm_expansion
        tfdcm_bufs = [zeros(batch_size, hidden, d, freqs[-1]) for d in cfg.tfdcm_dilations]
        dec_ins = (2 * chans[3], 2 * chans[2], 2 * chans[1], 2 * chans[0])
        dec_freqs = (freqs[4], freqs[3], freqs[2], freqs[1])
        dec_prev = [zeros(batch_size, c, 1, f) for c, f in zip(dec_ins, dec_freqs)]
        return GeneratorState(
            enc_prev=enc_prev,
            tfdcm_bufs=tfdcm_bufs,
            t_lstm=None,
            dec_prev=dec_prev,
            film_sum=zeros(batch_size, chans[-1], 1, freqs[-1]),
            film_count=0,
            f0_gru=None,
            high_prev=zeros(batch_size, 2, 1, HIGH_BINS),
            high_gru=None,
            lost_run=0,
        )

    def streaming_step(self, frame, loss_flag, state: GeneratorState):
        """Process one compressed full-band frame; returns a 1-frame output.

        `frame` is (481, 2), (1, 481, 2), or batched (B, 1, 481, 2); the state
        must come from init_state() or a previous step with the same batch
        size.
        """
        f = frame if isinstance(frame, torch.Tensor) else torch.as_tensor(frame)
        squeeze = f.dim() < 4
        if f.dim() == 2:
            f = f[None, None]
        elif f.dim() == 3:
            f = f[None]
        if f.shape[1] != 1 or f.shape[2] != WIDE_BINS + HIGH_BINS or f.shape[3] != 2:
            raise ValueError(f"expected one (481, 2) frame, got {tuple(frame.shape)}")
        p = next(self.parameters())
        f = f.to(dtype=p.dtype, device=p.device)
        wide, high = f[:, :, :WIDE_BINS, :], f[:, :, WIDE_BINS:, :]
        self._check_inputs(wide, high)
        b = f.shape[0]
        if state.film_sum.shape[0] != b:
            raise ValueError(
                f"state batch size {state.film_sum.shape[0]} does not match input batch {b}"
            )
        flags = torch.as_tensor(loss_flag, dtype=p.dtype, device=p.device).reshape(-1)
        if flags.numel() == 1 and b > 1:
            flags = flags.expand(b)
        if flags.numel() != b:
            raise ValueError(f"need one loss flag per stream, got {flags.numel()} for batch {b}")

        x = wide.permute(0, 3, 1, 2)
        if self.config.include_loss_flag_input:
            plane = flags.view(b, 1, 1, 1).expand(b, 1, 1, WIDE_BINS)
            x = torch.cat((x, plane), dim=1)
        enc_prev, skips = [], []
        for enc, prev in zip(self.encoders, state.enc_prev):
            x, new_prev = enc(x, prev)
            enc_prev.append(new_prev)
            skips.append(x)
        bufs = []
        for block, buf in zip(self.tfdcm, state.tfdcm_bufs):
            x, new_buf = block(x, buf)
            bufs.append(new_buf)
        x, t_lstm = self.bottleneck(x, state.t_lstm)
        f0, film_sum, film_count, f0_gru = self.f0_head(
            x, state.film_sum, state.film_count, state.f0_gru
        )
        dec_prev = []
        y = x
        for i, (dec, prev) in enumerate(zip(self.decoders, state.dec_prev)):
            y, new_prev = dec(torch.cat((y, skips[-1 - i]), dim=1), prev)
            dec_prev.append(new_prev)
        wide_out = y.permute(0, 2, 3, 1)
        high_out, high_prev, high_gru = self.highband(high, state.high_prev, state.high_gru)
        full = band_merge(BandPair(wide=wide_out, high=high_out))
        new_state = GeneratorState(
            enc_prev=enc_prev, tfdcm_bufs=bufs, t_lstm=t_lstm, dec_prev=dec_prev,
            film_sum=film_sum, film_count=film_count, f0_gru=f0_gru,
            high_prev=high_prev, high_gru=high_gru, lost_run=state.lost_run,
        )
        if squeeze:
            return GeneratorOutput(full[0], f0[0]), new_state
        return GeneratorOutput(full, f0), new_state


def build_generator(config: GeneratorConfig, seed: int = 0) -> BandSplitGenerator:
    """Deterministically initialized generator for a fixed (config, seed)."""
    torch.manual_seed(seed)
    return BandSplitGenerator(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(path, model: BandSplitGenerator, extra: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": CHECKPOINT_KIND,
        "config": asdict(model.config),
        "model_state": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_config: GeneratorConfig | None = None):
    """Restore (model, extra). A config echo mismatch or wrong version is an error."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is not a generator checkpoint")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {payload.get('format_version')} "
            f"is not supported (expected {CHECKPOINT_VERSION})"
        )
    config = GeneratorConfig(**payload["config"])
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"{path}: checkpoint config does not match the requested config")
    model = BandSplitGenerator(config)
    model.load_state_dict(payload["model_state"])
    return model, payload.get("extra", {})
