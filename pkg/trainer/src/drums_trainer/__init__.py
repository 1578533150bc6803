"""Training side of the spatial-basis refinement network.

Everything this package exchanges with the reconstruction side goes
through tensor archives on disk: basis archives in, weight archives
and parity dumps out. There is no code-level coupling between the two
packages.
"""

__version__ = "0.1.0"
