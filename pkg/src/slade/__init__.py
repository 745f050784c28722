"""Self-supervised dynamic anomaly detection over continuous-time edge
streams: evolving per-node memories scored against their own history."""

__version__ = "0.1.0"

from .memory import MemoryStore, NodeMemory
from .model import ModelConfig, ModelParams, SladeModel, TimeEncoding
from .scoring import (MetricReport, ScoreRecord, auc, average_precision,
                      latency_bench, metric_report, stream_inference)
from .stream import (EdgeStream, NodeRegistry, TemporalEdge, batch_iter,
                     chronological_split, validate)
from .training import (LossWeights, TrainConfig, advance_stream,
                       generation_loss, temporal_contrast_loss, train)

__all__ = [
    "EdgeStream", "TemporalEdge", "NodeRegistry", "validate",
    "chronological_split", "batch_iter",
    "MemoryStore", "NodeMemory",
    "ModelConfig", "ModelParams", "SladeModel", "TimeEncoding",
    "LossWeights", "TrainConfig", "train", "advance_stream",
    "temporal_contrast_loss", "generation_loss",
    "ScoreRecord", "MetricReport", "stream_inference", "auc",
    "average_precision", "metric_report", "latency_bench",
    "__version__",
]
