"""Joint learning of relative-pose predicates, lifted operators and stable DS skills."""

__version__ = "0.1.0"
