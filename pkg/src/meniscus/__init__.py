"""Mechano-biological simulation of a meniscus scaffold in a perfusion chamber.

Cell densities (dG), poroelastic scaffold (Biot with mixed Darcy flux),
channel flow (Stokes) and a stimulus map that ties mechanics to cell
differentiation rates.
"""

__version__ = "0.1.0"
