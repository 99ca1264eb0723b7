"""Dataset ingestion, image I/O, metrics, presets, checkpoints and the
command-line front end.

The ``cli`` module is imported lazily by the console entry point so that
importing this package never pulls in the training stack.
"""
from . import checkpoint, datasets, images, metrics, presets  # noqa: F401
