"""Operator surface: configuration, checkpoints, metrics and the command line."""
