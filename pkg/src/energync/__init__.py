"""Stochastic network calculus for systems powered by renewable energy."""
