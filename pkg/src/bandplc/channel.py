"""Gilbert-Elliott packet-loss channel: bursty trace sampling and application.

The channel is a two-state Markov chain over 20 ms packets (960 samples at
48 kHz). Good and Bad states carry their own loss probabilities; the classic
defaults (loss_good=0, loss_bad=1) make every Bad packet a loss, so burst
lengths follow the Bad-state sojourn distribution, geometric with mean
1/p_bg.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio import Waveform

PACKET_SAMPLES = 960  # 20 ms at 48 kHz, two STFT hops
MAX_RESAMPLE_ATTEMPTS = 100


@dataclass(frozen=True)
class GEParams:
    p_gb: float  # P(Good -> Bad) per packet
    p_bg: float  # P(Bad -> Good) per packet
    loss_good: float = 0.0
    loss_bad: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_gb", "p_bg", "loss_good", "loss_bad"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")
        if self.p_gb + self.p_bg == 0.0:
            raise ValueError("p_gb + p_bg must be positive (degenerate chain)")


@dataclass(frozen=True)
class LossTrace:
    flags: np.ndarray  # bool per packet, True = lost
    packet_samples: int = PACKET_SAMPLES

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=bool)
        if flags.ndim != 1 or flags.size == 0:
            raise ValueError("trace must be a non-empty 1-D flag sequence")
        if self.packet_samples != PACKET_SAMPLES:
            raise ValueError(f"packet size must be {PACKET_SAMPLES} samples")
        object.__setattr__(self, "flags", flags)

    @property
    def num_packets(self) -> int:
        return int(self.flags.size)

    @property
    def loss_rate(self) -> float:
        return float(self.flags.mean())


def expected_loss_rate(params: GEParams) -> float:
    """Stationary loss rate pi_G * loss_good + pi_B * loss_bad."""
    pi_bad = params.p_gb / (params.p_gb + params.p_bg)
    return (1.0 - pi_bad) * params.loss_good + pi_bad * params.loss_bad


def _sample_states(rng: np.random.Generator, num_packets: int, p_gb: float,
                   p_bg: float) -> np.ndarray:
    """Bad-state indicator per packet, chain started in Good.

    Sampled as alternating geometric sojourns, which is exactly the two-state
    chain but vectorizes.
    """
    if p_gb == 0.0:
        return np.zeros(num_packets, dtype=bool)
    if p_bg == 0.0:
        first_good = int(rng.geometric(p_gb))
        states = np.ones(num_packets, dtype=bool)
        states[:first_good] = False
        return states
    mean_cycle = 1.0 / p_gb + 1.0 / p_bg
    lengths = np.empty(0, dtype=np.int64)
    while lengths.sum() < num_packets:
        n_cycles = max(8, int(1.5 * num_packets / mean_cycle) + 8)
        good = rng.geometric(p_gb, size=n_cycles)
        bad = rng.geometric(p_bg, size=n_cycles)
        chunk = np.empty(2 * n_cycles, dtype=np.int64)
        chunk[0::2] = good
        chunk[1::2] = bad
        lengths = np.concatenate([lengths, chunk])
    cum = np.cumsum(lengths)
    n_runs = int(np.searchsorted(cum, num_packets)) + 1
    pattern = np.resize(np.array([False, True]), n_runs)
    return np.repeat(pattern, lengths[:n_runs])[:num_packets]


def sample_trace(params: GEParams, num_packets: int, max_rate: float = 0.5) -> LossTrace:
    """Draw a loss trace, resampling (seed + 1, seed + 2, ...) until the
    realized rate respects the cap.

    Parameters whose expected rate already exceeds the cap are rejected
    outright.
    """
    if num_packets < 1:
        raise ValueError("num_packets must be >= 1")
    expected = expected_loss_rate(params)
    if expected > max_rate + 1e-12:
        raise ValueError(
            f"expected loss rate {expected:.4f} exceeds the cap {max_rate:.4f}"
        )
    for attempt in range(MAX_RESAMPLE_ATTEMPTS):
        rng = np.random.default_rng(params.seed + attempt)
        states = _sample_states(rng, num_packets, params.p_gb, params.p_bg)
        if params.loss_good == 0.0 and params.loss_bad == 1.0:
            flags = states.copy()
        else:
            p_loss = np.where(states, params.loss_bad, params.loss_good)
            flags = rng.random(num_packets) < p_loss
        if flags.mean() <= max_rate:
            return LossTrace(flags=flags)
    raise RuntimeError(
        f"failed to sample a trace under the {max_rate:.0%} cap in "
        f"{MAX_RESAMPLE_ATTEMPTS} attempts"
    )


def apply_trace(waveform: Waveform, trace: LossTrace) -> Waveform:
    """Zero out lost packets; received samples pass through bit-identical."""
    n = len(waveform)
    needed = -(-n // trace.packet_samples)
    if trace.num_packets < needed:
        raise ValueError(
            f"trace covers {trace.num_packets} packets but the signal needs {needed}"
        )
    mask = np.repeat(trace.flags[:needed], trace.packet_samples)[:n]
    out = waveform.samples.copy()
    out[mask] = 0.0
    return Waveform(out, waveform.sample_rate)


def burst_histogram(trace: LossTrace) -> dict:
    """Counts of maximal consecutive-loss run lengths, e.g. 011011 -> {2: 2}."""
    f = trace.flags.astype(np.int8)
    edges = np.diff(np.concatenate(([0], f, [0])))
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0]
    hist: dict = {}
    for run in (ends - starts):
        hist[int(run)] = hist.get(int(run), 0) + 1
    return hist


def mean_burst_length(trace: LossTrace) -> float:
    hist = burst_histogram(trace)
    total = sum(length * count for length, count in hist.items())
    runs = sum(hist.values())
    return total / runs if runs else 0.0


def write_trace(path, trace: LossTrace) -> None:
    """One ASCII flag per line, '1' = lost, '0' = received, LF endings."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for flag in trace.flags:
            fh.write("1\n" if flag else "0\n")


def read_trace(path) -> LossTrace:
    flags = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.strip()
            if token == "1":
                flags.append(True)
            elif token == "0":
                flags.append(False)
            else:
                raise ValueError(f"{path}:{lineno}: malformed trace line {line.rstrip()!r}")
    if not flags:
        raise ValueError(f"{path}: empty trace file")
    return LossTrace(flags=np.array(flags, dtype=bool))


def frame_loss_flags(trace: LossTrace, num_frames: int, hop: int = 480) -> np.ndarray:
    """Per-STFT-frame loss flags: frame t belongs to packet floor(t * hop / 960)."""
    packets = (np.arange(num_frames) * hop) // trace.packet_samples
    packets = np.minimum(packets, trace.num_packets - 1)
    return trace.flags[packets]


def trace_with_seed(params: GEParams, seed: int) -> GEParams:
    return replace(params, seed=seed)
