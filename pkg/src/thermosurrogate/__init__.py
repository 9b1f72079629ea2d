"""Thermal field surrogates for machine tools.

Synthetic thermal-network data, correlation-based sensor reduction, six
sequence architectures on a small numpy autodiff engine, benchmark
protocols, and a thermo-elastic drift/compensation chain.
"""

__version__ = "0.1.0"
