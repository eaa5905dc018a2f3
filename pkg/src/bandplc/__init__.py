"""Band-split packet loss concealment toolkit for 48 kHz speech.

A spectral-domain generator restores audio lost to dropped 20 ms packets:
the 0-8 kHz band runs through a gated convolutional-recurrent network, the
8-24 kHz band through a light GRU path. Training combines spectral, time,
f0, and linguistic-feature objectives with three discriminator families;
loss patterns come from a Gilbert-Elliott channel, and streaming inference
applies gain decay over long gaps and splices received packets through
untouched.
"""

from .audio import SAMPLE_RATE, Waveform, read_wav, write_wav
from .channel import GEParams, LossTrace, apply_trace, expected_loss_rate, sample_trace
from .frontend import BandPair, StftConfig, band_merge, band_split, compress, decompress, istft, stft
from .generator import BandSplitGenerator, GeneratorConfig, build_generator, count_parameters
from .inference import DecayPolicy, SpliceConfig, conceal, gain_for_frame, measure_rtf
from .losses import LossReport, LossWeights
from .training import TrainingConfig, train_loop

__version__ = "0.1.0"

__all__ = [
    "SAMPLE_RATE", "Waveform", "read_wav", "write_wav",
    "GEParams", "LossTrace", "apply_trace", "expected_loss_rate", "sample_trace",
    "BandPair", "StftConfig", "band_merge", "band_split", "compress", "decompress",
    "istft", "stft",
    "BandSplitGenerator", "GeneratorConfig", "build_generator", "count_parameters",
    "DecayPolicy", "SpliceConfig", "conceal", "gain_for_frame", "measure_rtf",
    "LossReport", "LossWeights",
    "TrainingConfig", "train_loop",
    "__version__",
]
