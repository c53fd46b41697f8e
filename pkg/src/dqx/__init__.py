"""dqx: exception detection, ranking and review-feedback engine for granular
securities data."""

__version__ = "0.1.0"
