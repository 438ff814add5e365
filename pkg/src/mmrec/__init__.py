"""Multimodal short-video recommendation: attention-weighted modality fusion,
a transformer over recent behavior, static-profile fusion, and a two-stage
retrieve-then-rank pipeline, trained and evaluated on simulated logs."""

__version__ = "0.1.0"
