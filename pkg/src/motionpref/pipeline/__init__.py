"""Synthetic benchmark, phased training, preference curation and evaluation."""
