"""Hierarchical home-location prediction for social media users."""

__version__ = "0.1.0"

from .estimator import HLPNNClassifier  # noqa: E402
from .geo import City, CityRegistry, MetricsReport, haversine  # noqa: E402
from .graph import LineEmbedding, MentionGraph, NetworkEmbeddings  # noqa: E402
from .text import UserRecord, load_dataset, tokenize  # noqa: E402

__all__ = [
    "City",
    "CityRegistry",
    "HLPNNClassifier",
    "LineEmbedding",
    "MentionGraph",
    "MetricsReport",
    "NetworkEmbeddings",
    "UserRecord",
    "haversine",
    "load_dataset",
    "tokenize",
]
