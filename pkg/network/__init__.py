"""Compact convnet implemented with numpy."""
