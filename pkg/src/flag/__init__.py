"""Document classification over hierarchical AMR graphs with graph attention."""

__version__ = "0.1.0"
