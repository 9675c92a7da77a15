"""Converters from external deep-learning checkpoints and TIFF microscopy
stacks into the neuroseg toolkit's file formats (NWA1 weight archives and
raw+JSON volumes).  This package only writes those formats; it never
inflates weights or runs models."""

__version__ = "0.1.0"
