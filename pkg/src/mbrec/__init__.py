"""Multi-behavior graph recommender with low-rank augmented contrastive training."""

__version__ = "0.1.0"
