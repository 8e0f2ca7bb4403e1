"""Variable-length video frame interpolation.

Two U-Nets share a small numpy reverse-mode autodiff engine: one estimates
bi-directional optical flow between two frames, the other refines the
approximated intermediate flows and predicts a soft visibility map for any
time step in (0, 1).
"""

from .model import Interpolator

__all__ = ["Interpolator"]
__version__ = "0.1.0"
