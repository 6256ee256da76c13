"""Emitters coupled to a 2D bosonic lattice, simulated via symmetry sectors, Block Lanczos chains and MPS."""

__version__ = "0.1.0"
