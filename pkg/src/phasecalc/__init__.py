"""Phase-space calculus on a discrete torus: metrics, flows, Weyl quantization and Egorov audits."""

__version__ = "0.1.0"

from . import classical, confined, egorov, examples, metrics, moyal, quantize  # noqa: E402,F401
