"""Cross-verified feature disentangling for remote physiological measurement.

Numpy-only autodiff engine, MSTmap construction, the two-encoder autoencoder
with its losses, physiological signal analysis and a synthetic data generator.
"""
__version__ = "0.1.0"
