"""Closed-loop Markov-modulated Markov chains: simulation and EM estimation."""
__version__ = "0.1.0"
