"""speechcloak: desk-scale real-time predictive perturbation against voice cloning."""

__version__ = "0.1.0"
