"""Imagined-speech decoding from high-density fNIRS.

Desk-scale, fully deterministic implementation of the whole decoding stack:
synthetic trial generation, three preprocessing levels, an extra-trees
speech-vs-rest detector, a ridge-to-sentence-embedding decoder, a 1D CNN,
the 3-fold x 5-seed evaluation protocol with binomial/Fisher statistics,
a channel-space GLM, and a near-real-time decode-to-LLM session service.
"""

__version__ = "0.1.0"
