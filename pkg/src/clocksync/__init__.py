"""Oscillator ppm measurement, online LSTM drift prediction and resync-interval evaluation."""

__version__ = "0.1.0"
