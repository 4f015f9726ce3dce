"""Deterministic in-process scenario harness and transports."""
