"""Meta-learning for repeated Bayesian persuasion.

Subpackages: :mod:`metapersuasion.obp` for online persuasion against unknown
receiver types and :mod:`metapersuasion.mpp` for Markov persuasion processes.
"""

__version__ = "0.1.0"
