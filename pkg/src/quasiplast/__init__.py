"""Time-discrete quasistatic elastoplasticity with linear kinematic hardening."""

__version__ = "0.1.0"
