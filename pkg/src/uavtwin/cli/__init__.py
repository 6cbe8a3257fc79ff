"""Command-line front end, run configuration and report figures."""
