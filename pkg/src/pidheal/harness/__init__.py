"""Configuration, persistence and experiment drivers for the command line."""
