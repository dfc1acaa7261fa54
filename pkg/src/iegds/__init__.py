"""Economic dispatch game for coupled electrical and gas distribution networks.

A relaxed potential minimization is followed by recovery of the gas-flow
binaries and pressures, repeated under a bracketed flow penalty.
"""

__version__ = "0.1.0"
