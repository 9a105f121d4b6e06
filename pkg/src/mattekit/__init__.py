"""mattekit: trimap-adaptive image matting at desk scale.

Everything runs on the CPU from a small numpy-backed tensor engine: data
synthesis, the two-decoder matting network with recurrent refinement,
training, inference, and evaluation.
"""

__version__ = "0.1.0"
