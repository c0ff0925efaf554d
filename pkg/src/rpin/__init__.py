"""Object-centric billiards dynamics: simulator, RoI interaction networks, training, planning."""

__version__ = "0.1.0"
