"""Adversarial multi-task training: data pipeline, alternating updates,
logging, checkpointing, and validation.

Each step is deterministic given (config.seed, step): the batch, the channel
draws, and the parameter init all derive from the config seed, so resuming
from a checkpoint reproduces the uninterrupted run.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from . import frontend, losses
from .audio import SAMPLE_RATE, CorpusManifest, build_manifest, cut_segment, read_wav
from .channel import (PACKET_SAMPLES, GEParams, apply_trace, expected_loss_rate,
                      frame_loss_flags, sample_trace)
from .discriminators import (MetricDiscriminator, MultiFrequencyDiscriminator,
                             MultiPeriodDiscriminator, si_sdr, target_metric_q)
from .frontend import BandPair, StftConfig, band_merge
from .generator import BandSplitGenerator, GeneratorConfig, save_checkpoint
from .inference import conceal, splice_weights
from .losses import LogFilterbankProvider, LossReport, LossWeights
from .pitch import load_or_extract_f0, normalize_f0

TRAIN_CHECKPOINT_KIND = "bandplc-train"
TRAIN_CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configurations."""


@dataclass(frozen=True)
class TrainingConfig:
    data_dir: str
    out_dir: str = "runs/default"
    generator_preset: str = "toy"
    batch_size: int = 4
    segment_seconds: float = 2.0
    total_steps: int = 200
    g_lr: float = 2e-4
    d_lr: float = 2e-4
    adam_beta1: float = 0.8
    adam_beta2: float = 0.99
    seed: int = 0
    checkpoint_every: int = 100
    validate_every: int = 0
    alpha: float = 0.1
    beta: float = 1e-3
    adv_weight: float = 1.0
    p_gb_min: float = 0.02
    p_gb_max: float = 0.2
    p_bg_min: float = 0.3
    p_bg_max: float = 0.8
    loss_good: float = 0.0
    loss_bad: float = 1.0
    max_loss_rate: float = 0.5
    valid_fraction: float = 0.1
    compression_exponent: float = 0.3
    mask_loss_to_lost_regions: bool = False
    splice_in_training: bool = False
    include_loss_flag_input: bool = True
    grad_clip_norm: float = 5.0
    linguistic_bands: int = 64
    crossfade_ms: float = 5.0

    def __post_init__(self):
        if self.g_lr <= 0 or self.d_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be >= 1")
        if self.segment_samples % PACKET_SAMPLES != 0 or self.segment_samples < 1920:
            raise ConfigError(
                f"segment must be a multiple of {PACKET_SAMPLES} samples and at least 1920"
            )
        for lo, hi, name in ((self.p_gb_min, self.p_gb_max, "p_gb"),
                             (self.p_bg_min, self.p_bg_max, "p_bg")):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"{name} range [{lo}, {hi}] is not an ordered probability range")
        worst = GEParams(p_gb=self.p_gb_max, p_bg=max(self.p_bg_min, 1e-9),
                         loss_good=self.loss_good, loss_bad=self.loss_bad)
        if expected_loss_rate(worst) > self.max_loss_rate + 1e-12:
            raise ConfigError(
                "GE ranges allow an expected loss rate above the "
                f"{self.max_loss_rate:.0%} cap"
            )

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * SAMPLE_RATE))

    @property
    def stft_config(self) -> StftConfig:
        return StftConfig(compression_exponent=self.compression_exponent)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, adv_weight=self.adv_weight)

    @property
    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig.for_preset(
            self.generator_preset, include_loss_flag_input=self.include_loss_flag_input
        )


def _converter(py_type: str):
    if py_type == "bool":
        return lambda s: {"true": True, "false": False, "1": True, "0": False}[s.lower()]
    return {"int": int, "float": float, "str": str}[py_type]


def parse_config_file(path) -> TrainingConfig:
    """Flat `key = value` file with `#` comments; unknown keys are errors."""
    field_types = {f.name: f.type for f in fields(TrainingConfig)}
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in field_types:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _converter(field_types[key])(value)
            except (ValueError, KeyError) as exc:
                raise ConfigError(
                    f"{path}:{lineno}: bad value {value!r} for {key!r}: {exc}"
                ) from exc
    if "data_dir" not in values:
        raise ConfigError(f"{path}: missing required key 'data_dir'")
    try:
        return TrainingConfig(**values)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def format_config(config: TrainingConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(TrainingConfig)]
    return "\n".join(lines)


def write_config_file(config: TrainingConfig, path) -> None:
    Path(path).write_text(format_config(config) + "\n", encoding="utf-8")


@dataclass
class Batch:
    bands: BandPair          # lossy compressed input, float32
    ref_bands: BandPair      # clean compressed reference
    flags: torch.Tensor      # (B, T) loss flag per frame
    clean: torch.Tensor      # (B, N)
    lossy: torch.Tensor      # (B, N)
    f0_target: torch.Tensor  # (B, T) normalized
    frame_mask: torch.Tensor
    sample_mask: torch.Tensor
    splice_w: torch.Tensor   # original-signal weight per sample
    traces: list


def make_batch(manifest: CorpusManifest, config: TrainingConfig, step: int) -> Batch:
    """Deterministic (seed, step) -> batch of lossy/clean pairs with targets."""
    entries = manifest.train_entries
    if not entries:
        raise ValueError("manifest has no training entries")
    rng = np.random.default_rng([config.seed, step])
    seg = config.segment_samples
    num_packets = seg // PACKET_SAMPLES
    hop = config.stft_config.hop
    t_frames = seg // hop
    cross = int(round(config.crossfade_ms * SAMPLE_RATE / 1000.0))

    clean_np = np.empty((config.batch_size, seg))
    lossy_np = np.empty((config.batch_size, seg))
    flags_np = np.empty((config.batch_size, t_frames))
    f0_np = np.empty((config.batch_size, t_frames))
    mask_np = np.empty((config.batch_size, seg))
    splice_np = np.empty((config.batch_size, seg))
    traces = []
    for i in range(config.batch_size):
        # redraw silent segments; SI-SDR needs a reference with energy
        for _ in range(20):
            entry = entries[int(rng.integers(len(entries)))]
            wav = read_wav(entry.path)
            max_start = (len(wav) - seg) // PACKET_SAMPLES
            start = int(rng.integers(max_start + 1)) * PACKET_SAMPLES
            clean = cut_segment(wav, start, seg)
            if np.any(clean.samples != 0.0):
                break
        params = GEParams(
            p_gb=float(rng.uniform(config.p_gb_min, config.p_gb_max)),
            p_bg=float(rng.uniform(config.p_bg_min, config.p_bg_max)),
            loss_good=config.loss_good, loss_bad=config.loss_bad,
            seed=int(rng.integers(2 ** 31)),
        )
        trace = sample_trace(params, num_packets, config.max_loss_rate)
        lossy = apply_trace(clean, trace)
        f0_full = load_or_extract_f0(entry.path, samples=wav.samples)
        start_frame = start // hop
        f0_np[i] = normalize_f0(f0_full[start_frame:start_frame + t_frames])
        clean_np[i] = clean.samples
        lossy_np[i] = lossy.samples
        flags_np[i] = frame_loss_flags(trace, t_frames, hop).astype(np.float64)
        mask_np[i] = np.repeat(trace.flags[:num_packets], PACKET_SAMPLES).astype(np.float64)
        splice_np[i] = splice_weights(trace, seg, cross)
        traces.append(trace)

    def _bands(x: np.ndarray) -> BandPair:
        pair = frontend.analyze(torch.from_numpy(x), config.stft_config)
        return BandPair(wide=pair.wide.to(torch.float32), high=pair.high.to(torch.float32))

    return Batch(
        bands=_bands(lossy_np),
        ref_bands=_bands(clean_np),
        flags=torch.from_numpy(flags_np).to(torch.float32),
        clean=torch.from_numpy(clean_np).to(torch.float32),
        lossy=torch.from_numpy(lossy_np).to(torch.float32),
        f0_target=torch.from_numpy(f0_np).to(torch.float32),
        frame_mask=torch.from_numpy(flags_np).to(torch.float32),
        sample_mask=torch.from_numpy(mask_np).to(torch.float32),
        splice_w=torch.from_numpy(splice_np).to(torch.float32),
        traces=traces,
    )


@dataclass
class TrainState:
    config: TrainingConfig
    step: int
    generator: BandSplitGenerator
    mpd: MultiPeriodDiscriminator
    mfd: MultiFrequencyDiscriminator
    metric_d: MetricDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    provider: LogFilterbankProvider

    def d_parameters(self):
        return itertools.chain(self.mpd.parameters(), self.mfd.parameters(),
                               self.metric_d.parameters())


def init_train_state(config: TrainingConfig) -> TrainState:
    torch.manual_seed(config.seed)
    generator = BandSplitGenerator(config.generator_config)
    mpd = MultiPeriodDiscriminator()
    mfd = MultiFrequencyDiscriminator()
    metric_d = MetricDiscriminator()
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.g_lr, betas=betas)
    opt_d = torch.optim.Adam(
        itertools.chain(mpd.parameters(), mfd.parameters(), metric_d.parameters()),
        lr=config.d_lr, betas=betas,
    )
    provider = LogFilterbankProvider(config.linguistic_bands, config.stft_config)
    return TrainState(config=config, step=0, generator=generator, mpd=mpd, mfd=mfd,
                      metric_d=metric_d, opt_g=opt_g, opt_d=opt_d, provider=provider)


def _safe_metric_q(est: np.ndarray, ref: np.ndarray) -> float:
    try:
        return target_metric_q(est, ref)
    except ValueError:
        return 0.5  # silent reference carries no metric information


def train_step(state: TrainState, batch: Batch) -> LossReport:
    """One discriminator update followed by one generator update."""
    cfg = state.config
    weights = cfg.loss_weights
    p = cfg.compression_exponent
    state.generator.train()

    out = state.generator(batch.bands, batch.flags)
    est_c = out.full_band_compressed
    est_wave = frontend.istft(frontend.decompress(est_c, p), cfg.stft_config,
                              length=batch.clean.shape[-1])
    ref_c = band_merge(batch.ref_bands)
    est_mag = frontend.compressed_magnitude(est_c)
    clean_mag = frontend.compressed_magnitude(ref_c)

    zero = torch.zeros((), dtype=est_wave.dtype)
    gan_g, metric_g = zero, zero
    if weights.adv_weight > 0:
        est_detached = est_wave.detach()
        state.opt_d.zero_grad()
        d_loss = losses.lsgan_d_loss(state.mpd(batch.clean).score_maps,
                                     state.mpd(est_detached).score_maps)
        d_loss = d_loss + losses.lsgan_d_loss(state.mfd(batch.clean).score_maps,
                                              state.mfd(est_detached).score_maps)
        q = torch.tensor([
            _safe_metric_q(est_detached[i].numpy(), batch.clean[i].numpy())
            for i in range(batch.clean.shape[0])
        ], dtype=est_mag.dtype)
        score_clean = state.metric_d(clean_mag, clean_mag)
        score_est = state.metric_d(est_mag.detach(), clean_mag)
        d_loss = d_loss + losses.metricgan_d_loss(score_clean, score_est, q)
        d_loss.backward()
        torch.nn.utils.clip_grad_norm_(state.d_parameters(), cfg.grad_clip_norm)
        state.opt_d.step()

        gan_g = (losses.lsgan_g_loss(state.mpd(est_wave).score_maps)
                 + losses.lsgan_g_loss(state.mfd(est_wave).score_maps))
        metric_g = losses.metricgan_g_loss(state.metric_d(est_mag, clean_mag))

    frame_mask = batch.frame_mask if cfg.mask_loss_to_lost_regions else None
    sample_mask = batch.sample_mask if cfg.mask_loss_to_lost_regions else None
    plcpa = losses.plcpa_from_compressed(est_c, ref_c, frame_mask=frame_mask)
    mae = losses.mae_time_loss(est_wave, batch.clean, sample_mask)
    f0 = losses.f0_loss(out.f0_pred, batch.f0_target)
    if cfg.splice_in_training:
        ling_wave = batch.splice_w * batch.lossy + (1.0 - batch.splice_w) * est_wave
    else:
        ling_wave = est_wave
    linguistic = losses.linguistic_loss(ling_wave, batch.clean, state.provider)

    try:
        report = losses.combine(plcpa, mae, f0, linguistic, gan_g, metric_g, weights)
    except ValueError as exc:
        raise RuntimeError(f"aborting at step {state.step}: {exc}") from exc

    total = (plcpa + mae + weights.alpha * f0 + weights.beta * linguistic
             + weights.adv_weight * (gan_g + metric_g))
    state.opt_g.zero_grad()
    total.backward()
    torch.nn.utils.clip_grad_norm_(state.generator.parameters(), cfg.grad_clip_norm)
    state.opt_g.step()
    state.step += 1
    return report


def _capped_si_sdr(est: np.ndarray, ref: np.ndarray, cap: float = 60.0) -> float | None:
    if float(np.dot(ref, ref)) == 0.0:
        return None
    value = si_sdr(est, ref)
    if math.isinf(value):
        return cap if value > 0 else -cap
    return float(min(value, cap))


def validate(state: TrainState, manifest: CorpusManifest, max_files: int | None = None) -> dict:
    """Objective metrics of concealed vs clean over the validation split."""
    entries = manifest.valid_entries
    if not entries:
        raise ValueError("validation set is empty")
    if max_files is not None:
        entries = entries[:max_files]
    cfg = state.config
    stft_cfg = cfg.stft_config
    sums: dict = {}
    counts: dict = {}

    def _add(key, value):
        if value is None:
            return
        sums[key] = sums.get(key, 0.0) + value
        counts[key] = counts.get(key, 0) + 1

    for i, entry in enumerate(entries):
        clean = read_wav(entry.path)
        num_packets = -(-len(clean) // PACKET_SAMPLES)
        rng = np.random.default_rng([cfg.seed, 7919, i])
        params = GEParams(
            p_gb=float(rng.uniform(cfg.p_gb_min, cfg.p_gb_max)),
            p_bg=float(rng.uniform(cfg.p_bg_min, cfg.p_bg_max)),
            loss_good=cfg.loss_good, loss_bad=cfg.loss_bad,
            seed=int(rng.integers(2 ** 31)),
        )
        trace = sample_trace(params, num_packets, cfg.max_loss_rate)
        lossy = apply_trace(clean, trace)
        restored = conceal(state.generator, lossy, trace, stft_config=stft_cfg)

        est_spec = frontend.stft(restored.samples, stft_cfg)
        ref_spec = frontend.stft(clean.samples, stft_cfg)
        t_frames = est_spec.shape[0]
        flags = frame_loss_flags(trace, t_frames, stft_cfg.hop)
        _add("plcpa", float(losses.plcpa_loss(est_spec, ref_spec, cfg.compression_exponent)))
        _add("mae", float(np.mean(np.abs(restored.samples - clean.samples))))
        _add("si_sdr", _capped_si_sdr(restored.samples, clean.samples))
        lost_mask = np.repeat(trace.flags[:num_packets], PACKET_SAMPLES)[:len(clean)]
        if flags.any():
            frame_mask = torch.from_numpy(flags.astype(np.float64))
            _add("plcpa_lost", float(losses.plcpa_from_compressed(
                frontend.compress(est_spec, cfg.compression_exponent),
                frontend.compress(ref_spec, cfg.compression_exponent),
                frame_mask=frame_mask)))
            _add("mae_lost", float(np.mean(
                np.abs(restored.samples[lost_mask] - clean.samples[lost_mask]))))
            _add("si_sdr_lost", _capped_si_sdr(restored.samples[lost_mask],
                                               clean.samples[lost_mask]))
        else:
            _add("si_sdr_lost", 60.0)
    metrics = {key: sums[key] / counts[key] for key in sums}
    metrics["files"] = len(entries)
    return metrics


def save_train_checkpoint(path, state: TrainState) -> None:
    payload = {
        "format_version": TRAIN_CHECKPOINT_VERSION,
        "kind": TRAIN_CHECKPOINT_KIND,
        "config": asdict(state.config),
        "step": state.step,
        "generator": state.generator.state_dict(),
        "mpd": state.mpd.state_dict(),
        "mfd": state.mfd.state_dict(),
        "metric_d": state.metric_d.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
    }
    torch.save(payload, path)


def load_train_checkpoint(path, expected_config: TrainingConfig | None = None) -> TrainState:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ConfigError(f"cannot read training checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("kind") != TRAIN_CHECKPOINT_KIND:
        raise ConfigError(f"{path} is not a training checkpoint")
    if payload.get("format_version") != TRAIN_CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported training checkpoint version")
    config = TrainingConfig(**payload["config"])
    if expected_config is not None and config != expected_config:
        raise ConfigError(f"{path}: checkpoint config does not match the provided config")
    state = init_train_state(config)
    state.generator.load_state_dict(payload["generator"])
    state.mpd.load_state_dict(payload["mpd"])
    state.mfd.load_state_dict(payload["mfd"])
    state.metric_d.load_state_dict(payload["metric_d"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.step = int(payload["step"])
    return state


def train_loop(config: TrainingConfig, resume: str | None = None, log_fn=None) -> TrainState:
    """Run (or resume) a full training job; writes CSV loss log and checkpoints."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(config.data_dir, config.segment_seconds,
                              config.valid_fraction, config.seed)
    state = load_train_checkpoint(resume, config) if resume else init_train_state(config)
    write_config_file(config, out_dir / "config.resolved.cfg")
    csv_path = out_dir / "loss_log.csv"
    mode = "a" if (resume and csv_path.exists()) else "w"
    with open(csv_path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(("step",) + LossReport.CSV_FIELDS)
        while state.step < config.total_steps:
            batch = make_batch(manifest, config, state.step)
            report = train_step(state, batch)
            writer.writerow([state.step] + [f"{v:.8g}" for v in report.as_row()])
            if log_fn is not None:
                log_fn(f"step {state.step}/{config.total_steps} "
                       f"total={report.total:.5f} plcpa={report.plcpa:.5f} "
                       f"mae={report.mae:.5f}")
            if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_train_checkpoint(out_dir / f"ckpt_step{state.step}.pt", state)
            if (config.validate_every and state.step % config.validate_every == 0
                    and manifest.valid_entries):
                metrics = validate(state, manifest)
                if log_fn is not None:
                    log_fn(f"validate @ {state.step}: " + ", ".join(
                        f"{k}={v:.4g}" for k, v in metrics.items()))
    save_train_checkpoint(out_dir / "train_state.pt", state)
    save_checkpoint(out_dir / "generator.pt", state.generator,
                    extra={"step": state.step, "preset": config.generator_preset})
    return state
