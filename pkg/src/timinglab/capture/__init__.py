"""The adversary's sensing layer: traces in, token timing signatures out."""
from .pcap import export_pcap, import_pcap, parse_endpoint
from .signature import (
    SizeClusterModel,
    TokenTimingSignature,
    fit_size_clusters,
    ipd,
    reconstruct_token_delays,
    signatures,
    tokens_in_packet,
)

__all__ = [
    "SizeClusterModel",
    "TokenTimingSignature",
    "export_pcap",
    "fit_size_clusters",
    "import_pcap",
    "ipd",
    "parse_endpoint",
    "reconstruct_token_delays",
    "signatures",
    "tokens_in_packet",
]
