"""Uncertainty-aware multi-modal semantic communication: local
self-supervised pre-training, evidential fusion fine-tuning, and
uncertainty-guided retransmission over simulated wireless channels."""

__version__ = "0.1.0"
