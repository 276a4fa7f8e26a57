"""
boltzmix: space-homogeneous Boltzmann system for mixtures of monatomic and
polyatomic gases.
"""

__version__ = "0.3.0"
