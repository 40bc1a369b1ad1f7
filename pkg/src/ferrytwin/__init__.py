"""Ferry digital-twin toolkit: synthetic transit data, preprocessing,
auto-regressive state forecasting with GRU residual correction, and an
offline-RL environment with curriculum rewards."""

__version__ = "0.1.0"
