"""Symbolic and numerical tools for a BRST-invariant flow-equation model.

Modules
-------
algebra     exact rational-function arithmetic over named indeterminates
regulator   regulator, propagators and flow kernels
couplings   catalogue of relevant couplings and insertion constants
sti         Slavnov-Taylor identity solver and dependency checks
flow        numerical tree and one-loop flow engine
cli         command line interface
"""
__version__ = "0.1.0"
