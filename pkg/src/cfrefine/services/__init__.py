"""Clients for the external model services and their in-process mocks."""

from cfrefine.services.clients import (
    AttributionClient,
    ClassifierClient,
    EmbedderClient,
    GenerationParams,
    GeneratorClient,
    ScoredTokens,
    ScorerClient,
    Services,
    WindowConfig,
    align_spans,
    vote,
    window_starts,
)
from cfrefine.services.transport import HttpTransport, LocalTransport, ServiceClient, Transport

__all__ = [
    "AttributionClient",
    "ClassifierClient",
    "EmbedderClient",
    "GenerationParams",
    "GeneratorClient",
    "HttpTransport",
    "LocalTransport",
    "ScoredTokens",
    "ScorerClient",
    "ServiceClient",
    "Services",
    "Transport",
    "WindowConfig",
    "align_spans",
    "vote",
    "window_starts",
]
