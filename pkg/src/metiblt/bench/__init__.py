"""Experiment runners, baselines and the command-line entry point."""
