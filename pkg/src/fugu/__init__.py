"""Stochastic-MPC adaptive bitrate control with a learned transmission-time predictor.

The package bundles the controller (``control``), the predictors it consumes
(``predictors`` on top of the small numpy network in ``nn``), a trace-driven
playback simulator, the telemetry format used to train in place, and the
statistics used to compare schemes.
"""

__version__ = "0.1.0"
