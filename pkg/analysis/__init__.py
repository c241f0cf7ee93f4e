"""Evaluation, label-vector analysis and synthetic experiments."""
