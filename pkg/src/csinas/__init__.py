"""Architecture search for CSI-feedback decoders on synthetic channel scenes."""

__version__ = "0.1.0"
