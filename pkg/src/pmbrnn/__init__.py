"""Bayesian LSTM (MC dropout) failure-window forecasting for turbofan telemetry."""

__version__ = "0.1.0"
