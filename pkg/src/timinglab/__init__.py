"""Simulator and toolkit for timing side channels in speculative decoding."""
from .errors import ConfigError, DataError, LabError
from .specsim import GenEvent, Scenario, SpeculativeConfig, baseline_generate, speculative_generate, train_ngram
from .trace import Trace, read_jsonl, write_jsonl
from .wirechan import FrameSpec, NetModel, PacketRecord, frame, observe, transmit

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "LabError", "GenEvent", "Scenario", "SpeculativeConfig", "baseline_generate",
    "speculative_generate", "train_ngram", "Trace", "read_jsonl", "write_jsonl", "FrameSpec", "NetModel",
    "PacketRecord", "frame", "observe", "transmit",
]
