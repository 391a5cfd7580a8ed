"""Particle filters for McKean-Vlasov signals in the small signal-to-noise regime.

Modules
-------
measure     weighted ensembles, integration, Wasserstein-2
model       coefficient sets, assumption checks, gallery models
lions       cylindrical test functions, L-derivatives, mean-field generator
simulate    interacting-particle signal and observation simulation
filtering   weighted-particle Zakai / Kushner-Stratonovich filters
ldp         controlled skeletons, rate estimation, Laplace decay check
cli         ``mvfilter`` experiment runner
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402,F401
