"""Linear mode connectivity laboratory for ReLU multilayer perceptrons."""

__version__ = "0.1.0"
