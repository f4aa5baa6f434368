"""Logging and settings-file helpers for the command-line entry point."""
