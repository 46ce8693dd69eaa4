"""Adversarial behaviour learning for rule-based highway traffic."""

__version__ = "0.1.0"
