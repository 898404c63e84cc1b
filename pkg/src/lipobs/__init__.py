"""lipobs: LMI-based robust H-infinity observer synthesis for Lipschitz
nonlinear systems, with an embedded small-scale SDP solver, Lipschitz
constant estimation, and simulation-based validation."""

__version__ = "0.1.0"
