"""Groundtruth tag data, annotation, co-occurrence and noise analysis."""
