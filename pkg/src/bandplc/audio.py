"""WAV I/O, corpus manifests, and segment slicing for 48 kHz mono audio.

The whole pipeline runs at 48 kHz; off-rate input is an error rather than
something to resample silently. Files must be mono RIFF WAV, either 16-bit
PCM or 32-bit IEEE float.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 48000
PCM16_SCALE = 32768.0

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE


class AudioFormatError(ValueError):
    """A WAV file violates the 48 kHz / mono / PCM16-or-float32 contract."""


@dataclass(frozen=True)
class Waveform:
    """A mono 48 kHz signal with float samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D sample sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}"
            )
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / float(self.sample_rate)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    num_samples: int
    split: str  # "train" or "valid"


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")

    def split_entries(self, split: str):
        return [e for e in self.entries if e.split == split]

    @property
    def train_entries(self):
        return self.split_entries("train")

    @property
    def valid_entries(self):
        return self.split_entries("valid")


def _wav_info(path: Path):
    """Parse RIFF headers without loading audio data.

    Returns (sample_rate, channels, bits_per_sample, audio_format, num_frames).
    """
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
        fmt = None
        data_size = None
        while True:
            chunk_head = fh.read(8)
            if len(chunk_head) < 8:
                break
            chunk_id, size = struct.unpack("<4sI", chunk_head)
            if chunk_id == b"fmt ":
                body = fh.read(size)
                if len(body) < 16:
                    raise AudioFormatError(f"{path}: truncated fmt chunk")
                fmt = struct.unpack("<HHIIHH", body[:16])
            elif chunk_id == b"data":
                data_size = size
                fh.seek(size + (size & 1), 1)
            else:
                fh.seek(size + (size & 1), 1)
            if fmt is not None and data_size is not None:
                break
        if fmt is None or data_size is None:
            raise AudioFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format == _FORMAT_EXTENSIBLE:
        # scipy resolves the real format from the extension; treat by bit depth
        audio_format = _FORMAT_FLOAT if bits == 32 else _FORMAT_PCM
    if block_align == 0:
        raise AudioFormatError(f"{path}: zero block alignment")
    return rate, channels, bits, audio_format, data_size // block_align


def read_wav(path) -> Waveform:
    """Read a mono 48 kHz PCM16 or float32 WAV into a Waveform in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: multichannel input not supported, got {data.ndim} channels")
    if rate != SAMPLE_RATE:
        raise AudioFormatError(
            f"{path}: resample required: file is {rate} Hz, pipeline runs at {SAMPLE_RATE} Hz"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(
            f"{path}: unsupported sample format {data.dtype}; expected 16-bit PCM or 32-bit float"
        )
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path, waveform: Waveform, encoding: str = "pcm16") -> None:
    """Write a Waveform as PCM16 (default) or float32 WAV."""
    if not isinstance(waveform, Waveform):
        waveform = Waveform(np.asarray(waveform))
    path = Path(path)
    if encoding == "pcm16":
        q = np.round(waveform.samples * PCM16_SCALE)
        data = np.clip(q, -PCM16_SCALE, PCM16_SCALE - 1).astype(np.int16)
    elif encoding == "float32":
        data = waveform.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown encoding {encoding!r}; use 'pcm16' or 'float32'")
    wavfile.write(str(path), waveform.sample_rate, data)


def cut_segment(waveform: Waveform, start_sample: int, length_samples: int) -> Waveform:
    """Exact slice [start, start+length) of a waveform."""
    if start_sample < 0 or length_samples <= 0:
        raise ValueError(f"invalid segment window [{start_sample}, +{length_samples})")
    end = start_sample + length_samples
    if end > len(waveform):
        raise ValueError(
            f"segment [{start_sample}, {end}) out of bounds for length {len(waveform)}"
        )
    return Waveform(waveform.samples[start_sample:end].copy(), waveform.sample_rate)


def build_manifest(root_dir, segment_seconds: float = 2.0, valid_fraction: float = 0.1,
                   seed: int = 0) -> CorpusManifest:
    """Scan a directory tree for usable WAVs and split them train/valid.

    Deterministic for a fixed (directory listing, seed). Files shorter than
    one segment are excluded; an empty or all-too-short corpus is an error.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    paths = sorted(p for p in root.rglob("*.wav") if p.is_file())
    if not paths:
        raise ValueError(f"empty corpus: no .wav files under {root}")
    if not 0.0 <= valid_fraction < 1.0:
        raise ValueError("valid_fraction must be in [0, 1)")
    segment_samples = int(round(segment_seconds * SAMPLE_RATE))
    usable = []
    for p in paths:
        rate, channels, bits, audio_format, num_frames = _wav_info(p)
        if rate != SAMPLE_RATE:
            raise AudioFormatError(f"{p}: resample required: file is {rate} Hz")
        if channels != 1:
            raise AudioFormatError(f"{p}: multichannel input not supported")
        if not ((audio_format == _FORMAT_PCM and bits == 16)
                or (audio_format == _FORMAT_FLOAT and bits == 32)):
            raise AudioFormatError(f"{p}: expected 16-bit PCM or 32-bit float")
        if num_frames >= segment_samples:
            usable.append((str(p), num_frames))
    if not usable:
        raise ValueError(
            f"no file under {root} is at least one segment ({segment_samples} samples) long"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(usable))
    n_valid = int(round(valid_fraction * len(usable)))
    valid_idx = set(int(i) for i in order[:n_valid])
    entries = tuple(
        ManifestEntry(path=p, num_samples=n, split="valid" if i in valid_idx else "train")
        for i, (p, n) in enumerate(usable)
    )
    return CorpusManifest(entries=entries)


def save_manifest(manifest: CorpusManifest, path) -> None:
    """Persist as line-oriented text: `<path>\\t<num_samples>\\t<split>`."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(f"{e.path}\t{e.num_samples}\t{e.split}\n")


def load_manifest(path) -> CorpusManifest:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("train", "valid"):
                raise ValueError(f"{path}:{lineno}: malformed manifest line {line!r}")
            entries.append(ManifestEntry(parts[0], int(parts[1]), parts[2]))
    if not entries:
        raise ValueError(f"{path}: empty manifest")
    return CorpusManifest(entries=tuple(entries))
