from .detectors import DetectorLayout, DetectorRecord, extract_detectors
from .graph import MatchingGraph, apply_loss_edits, build_matching_graph, edge_weight
from .matching import DecodeResult, Decoder, FailureRate, decode_values, logical_failure_rate

__all__ = [
    "DecodeResult",
    "Decoder",
    "DetectorLayout",
    "DetectorRecord",
    "FailureRate",
    "MatchingGraph",
    "apply_loss_edits",
    "build_matching_graph",
    "decode_values",
    "edge_weight",
    "extract_detectors",
    "logical_failure_rate",
]
