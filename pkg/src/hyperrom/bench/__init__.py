"""Load paths, campaigns, metrics, sweeps."""
