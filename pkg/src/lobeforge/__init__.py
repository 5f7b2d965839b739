"""Design and quasi-static simulation of bistable doubly curved lobe actuators."""

__version__ = "0.1.0"
