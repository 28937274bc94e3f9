"""Benchmarking harness for defect classifiers built from discretized labels
versus regression models on raw defect counts."""

__version__ = "0.1.0"
