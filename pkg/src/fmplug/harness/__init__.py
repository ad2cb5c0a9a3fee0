"""Metrics, analytic oracles, configuration and benchmark orchestration."""
