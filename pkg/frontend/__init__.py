"""Audio-to-feature frontend."""
