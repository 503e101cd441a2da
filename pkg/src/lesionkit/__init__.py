"""Anatomy-aware 3D lesion detection toolkit.

Forward-only detection models (shifted-window transformer and conv
encoders behind a feature pyramid with detection heads), box geometry and
post-processing, verified loss gradients, self-supervised corruption
transforms, FROC/AP evaluation, and a deterministic phantom generator to
exercise it all end to end.
"""

__version__ = "0.1.0"
