"""Agent-to-agent protocol: domain model, task lifecycle, wire layer."""
