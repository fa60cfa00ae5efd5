"""Multitask structured prediction for community question answering.

Feed-forward task networks produce subtask-specific embeddings for
comment goodness (A), question relatedness (B), and comment relevance
(C); a globally normalized pairwise CRF performs joint inference over
configurable graph topologies connecting the three subtasks.
"""

__version__ = "0.1.0"
