"""Streaming learned-hashing retrieval with a query pool.

Linear hash functions are trained incrementally from labeled stream
batches; top-K queries run over bit-packed binary codes either by a full
database re-encode or through a pool of central points whose neighbor
lists bound the per-query re-encoding work.
"""

__version__ = "0.1.0"

from .data import Dataset, StreamBatcher, SyntheticSpec, gen_synthetic, ingest
from .hashing import CodeMatrix, HashModel, HyperParams, encode, hamming, sgn, top_alpha
from .pool import QueryPool, full_scan_query, online_query
from .trainer import TrainState, train_stage

__all__ = [
    "Dataset", "StreamBatcher", "SyntheticSpec", "gen_synthetic", "ingest",
    "CodeMatrix", "HashModel", "HyperParams", "encode", "hamming", "sgn",
    "top_alpha", "QueryPool", "full_scan_query", "online_query",
    "TrainState", "train_stage", "__version__",
]
