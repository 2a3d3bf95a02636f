"""Operational loop: scheduled ingestion, alert store, review workflow, API."""

from .store import (  # noqa: F401
    Alert,
    AlertStore,
    ConflictError,
    NotFound,
    TransitionError,
    LEGAL_TRANSITIONS,
)
from .ingest import IngestDeferred, IngestJob, run_ingest  # noqa: F401
