"""Amino-acid tables, backbone atom vocabulary, and ideal local geometry."""

from __future__ import annotations

import numpy as np

__all__ = [
    "AA3",
    "AA1",
    "AA3_TO_INDEX",
    "AA1_TO_INDEX",
    "NUM_AA_TYPES",
    "NONCANONICAL_TO_CANONICAL",
    "BACKBONE_SLOTS",
    "ATOM_VOCAB",
    "NUM_ATOM_TYPES",
    "IDEAL_N",
    "IDEAL_CA",
    "IDEAL_C",
    "IDEAL_O",
    "virtual_cb",
    "ideal_backbone",
]

AA3 = (
    "ALA", "ARG", "ASN", "ASP", "CYS",
    "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO",
    "SER", "THR", "TRP", "TYR", "VAL",
)
AA1 = "ARNDCQEGHILKMFPSTWYV"
NUM_AA_TYPES = 20

AA3_TO_INDEX = {name: i for i, name in enumerate(AA3)}
AA1_TO_INDEX = {c: i for i, c in enumerate(AA1)}

# common modified residues mapped onto their canonical parent
NONCANONICAL_TO_CANONICAL = {
    "MSE": "MET",
    "SEC": "CYS",
    "PYL": "LYS",
    "HYP": "PRO",
    "MLY": "LYS",
    "CSO": "CYS",
    "PTR": "TYR",
    "SEP": "SER",
    "TPO": "THR",
    "ASX": "ASN",
    "GLX": "GLN",
}

BACKBONE_SLOTS = ("N", "CA", "C", "O", "CB")

ATOM_VOCAB = {"N": 0, "CA": 1, "C": 2, "O": 3, "CB": 4, "CB_VIRTUAL": 5}
NUM_ATOM_TYPES = 6

# Ideal backbone geometry expressed in the residue frame (CA at the origin,
# e1 along CA->C, e2 the orthogonalized CA->N direction). Bond lengths and
# angles follow standard protein values: CA-C 1.525, N-CA 1.458 at a
# 111-degree N-CA-C angle, C-O 1.231 at a 120.5-degree CA-C-O angle.
IDEAL_CA = np.zeros(3)
IDEAL_C = np.array([1.525, 0.0, 0.0])
_N_ANGLE = np.deg2rad(111.0)
IDEAL_N = 1.458 * np.array([np.cos(_N_ANGLE), np.sin(_N_ANGLE), 0.0])
_O_ANGLE = np.deg2rad(180.0 - 120.5)
IDEAL_O = IDEAL_C + 1.231 * np.array([np.cos(_O_ANGLE), -np.sin(_O_ANGLE), 0.0])


def virtual_cb(n: np.ndarray, ca: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Ideal Cbeta position from the three backbone atoms (tetrahedral build)."""
    n = np.asarray(n, dtype=np.float64)
    ca = np.asarray(ca, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    b = ca - n
    cc = c - ca
    a = np.cross(b, cc)
    return -0.58273431 * a + 0.56802827 * b - 0.54067466 * cc + ca


IDEAL_CB = virtual_cb(IDEAL_N, IDEAL_CA, IDEAL_C)


def ideal_backbone(ca: np.ndarray, frame: np.ndarray) -> dict[str, np.ndarray]:
    """Place the five backbone slots from a CA position and an orientation."""
    ca = np.asarray(ca, dtype=np.float64)
    frame = np.asarray(frame, dtype=np.float64)
    return {
        "N": ca + frame @ IDEAL_N,
        "CA": ca.copy(),
        "C": ca + frame @ IDEAL_C,
        "O": ca + frame @ IDEAL_O,
        "CB": ca + frame @ IDEAL_CB,
    }
