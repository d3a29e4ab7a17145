"""Desk-scale manipulation-prior pipeline: supervision extraction from frame
sequences, hand pose tokenization, contact/pose prior pretraining, contact
prediction metrics, and a behavior-cloning evaluation protocol."""

__version__ = "0.1.0"
