"""One-shot converters from published raw graph artifacts to the neutral
dataset directory format (meta.json, edges.txt, features.bin, labels.txt)."""

__version__ = "0.1.0"
