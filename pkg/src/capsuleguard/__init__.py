"""Policy-compliance engine for encrypted data capsules."""

__version__ = "0.1.0"
