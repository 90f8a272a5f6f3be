"""Antibody CDR sequence-structure co-design with equivariant graph diffusion."""

__version__ = "0.1.0"
