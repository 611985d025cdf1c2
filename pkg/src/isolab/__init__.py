"""Desk-scale laboratory for supersingular isogeny graphs and their
endomorphism rings: exact field/curve/isogeny arithmetic, endomorphism
representations with CRT trace machinery, quaternion-order lattices, a
ground-truth engine, oracle-reduction drivers, and spectral diagnostics."""

__version__ = "0.1.0"
