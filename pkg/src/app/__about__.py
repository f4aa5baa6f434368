"""Version information for reactive-motion-synth."""

__version__ = "0.1.0"
