class ConfigurationError(ValueError):
    """Invalid shapes, ranges or config values supplied by the caller."""


class ContractViolation(RuntimeError):
    """An internal invariant was broken (non-finite values, bad geometry)."""
