"""Experiment configuration, statistics and the command line front end."""
