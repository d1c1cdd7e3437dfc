"""Detail-injection pansharpening: classical CS/MRA methods, a numpy CNN
engine with four fusion networks, quality indices and an experiment CLI."""

__version__ = "0.1.0"
