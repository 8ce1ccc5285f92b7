"""Core functionality for metatool."""
