"""Loss-distribution data curation with sigma-rule filtering, a desk-scale
ViT layer-fusion probe with verified gradients, and token-sampling
utilities, wired together by the ``beecurate`` command line."""

__version__ = "0.1.0"
