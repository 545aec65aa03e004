"""Experiment harness: configuration, synthetic data, dataset files,
training orchestration, evaluation, and the command-line interface."""
