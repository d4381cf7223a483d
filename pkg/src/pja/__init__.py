"""Power variation and jump activity estimation for discretely sampled processes."""
__version__ = "0.1.0"
