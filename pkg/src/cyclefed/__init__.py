"""cyclefed: deterministic FedAvg simulator for block-cyclic sampling studies."""

__version__ = "0.1.0"
