"""Workload generation, counter reports, sweeps and plots."""
