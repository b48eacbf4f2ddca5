"""TSNE, UMAP and GDR as one gradient-based dimensionality-reduction engine with switches."""

__version__ = "0.1.0"
