"""Optimal-transport bounds and entanglement diagnostics for domain adaptation."""
