"""Masked-autoencoder pretraining of a small Vision Transformer on strong-lensing images,
with classification and super-resolution fine-tuning, written on top of numpy."""

__version__ = "0.1.0"
