"""Adversarial pun generation: a dual-sense constrained generator trained
against a semi-supervised word-sense discriminator."""

__version__ = "0.1.0"
