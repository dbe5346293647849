"""Knowledge graphs over action classes and a GCN that regresses classifier
weights for unseen actions."""

__version__ = "0.1.0"
