"""Three-tier vehicle-fleet security pipeline, simulated end to end.

Tier 1 runs per-vehicle ensemble anomaly detection over sliding sensor
windows, tier 2 aggregates federated model updates with trimmed-mean
robustness and Laplace differential privacy, and tier 3 commits selectively
filtered threat events to a hash-chained ledger via BFT consensus. A
deterministic discrete-event engine binds the tiers together.
"""

__version__ = "0.1.0"
