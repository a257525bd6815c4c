"""Character-to-waveform Bangla speech synthesis at desk scale."""

__version__ = "0.1.0"
