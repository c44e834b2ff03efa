"""Listener head motion generation in 3DMM coefficient space.

Pipeline: speaker audio -> MFCC stacks -> hierarchical encoder (with
contrastive audio-text alignment) -> channel-attention fusion with the
speaker's coefficients -> bidirectional-GRU decoder -> listener
expression/pose sequences. Includes the evaluation metric suite, a
synthetic dyadic dataset generator, and training/inference tooling.
"""

__version__ = "0.1.0"
