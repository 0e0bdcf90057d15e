"""Coefficient-domain JPEG encryption, ciphertext retrieval features and a
multi-source retrieval protocol simulator."""

__version__ = "0.1.0"
