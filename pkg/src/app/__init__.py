"""Reactive motion synthesis: a two-stage diffusion cascade for reactor motion."""

from app.__about__ import __version__
from app.config import Config

__all__ = ["Config", "__version__"]
