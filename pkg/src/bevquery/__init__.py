"""Sparse pillar-query 3D detection decoder with a synthetic multi-camera simulator."""
from .errors import ConfigurationError, ContractViolation

__version__ = "0.1.0"
