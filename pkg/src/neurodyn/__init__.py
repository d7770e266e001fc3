"""Chaos-aware EEG analysis: PLRNN reconstruction, Lyapunov spectra and multitask decoding."""

__version__ = "0.1.0"
