"""Grid traffic-signal simulation, hybrid-pressure control and federated learning agents."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
