"""Mobile manipulation skill chaining on a 2.5-D kinematic home simulator."""

__version__ = "0.1.0"
