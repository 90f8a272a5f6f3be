"""Small synthetic antibody-antigen complexes for tests and demos.

Backbones are grown with ideal bond lengths and angles from torsion angles
drawn near the helical region, so every residue has a valid frame and
realistic local geometry. Numbering is chosen so the requested CDR window
lands inside the heavy (or light) chain.

Run `python -m cdrgen.synthetic OUTDIR` to write a small PDB corpus plus a
manifest that the command-line workflow can consume.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .structure.cdr import CDR_TABLES, cdr_chain_type
from .structure.instance import ComplexInstance, Residue, build_instance
from .structure.pdb import parse_pdb, write_pdb
from .structure.residues import AA3, virtual_cb
from .geometry import frames_from_backbone, normalize

__all__ = ["grow_backbone", "make_toy_complex", "write_toy_corpus"]

BOND_N_CA = 1.458
BOND_CA_C = 1.525
BOND_C_N = 1.329
BOND_C_O = 1.231
ANGLE_N_CA_C = np.deg2rad(111.0)
ANGLE_CA_C_N = np.deg2rad(116.2)
ANGLE_C_N_CA = np.deg2rad(121.7)
ANGLE_CA_C_O = np.deg2rad(120.5)


def _place(a, b, c, length, angle, torsion):
    """Next atom from three predecessors and internal coordinates."""
    bc = normalize(c - b)
    n = normalize(np.cross(b - a, bc))
    m = np.cross(n, bc)
    d = np.array(
        [
            -length * np.cos(angle),
            length * np.sin(angle) * np.cos(torsion),
            -length * np.sin(angle) * np.sin(torsion),
        ]
    )
    return c + d[0] * bc + d[1] * m + d[2] * n


def grow_backbone(n_res: int, rng: np.random.Generator) -> np.ndarray:
    """(n_res, 4, 3) backbone coordinates in slot order N, CA, C, O."""
    phis = rng.normal(np.deg2rad(-63.0), np.deg2rad(8.0), size=n_res)
    psis = rng.normal(np.deg2rad(-42.0), np.deg2rad(8.0), size=n_res)
    coords = np.zeros((n_res, 4, 3))
    coords[0, 0] = [0.0, 0.0, 0.0]
    coords[0, 1] = [BOND_N_CA, 0.0, 0.0]
    coords[0, 2] = coords[0, 1] + BOND_CA_C * np.array(
        [np.cos(np.pi - ANGLE_N_CA_C), np.sin(np.pi - ANGLE_N_CA_C), 0.0]
    )
    for i in range(n_res):
        n_i, ca_i, c_i = coords[i, 0], coords[i, 1], coords[i, 2]
        coords[i, 3] = _place(n_i, ca_i, c_i, BOND_C_O, ANGLE_CA_C_O, psis[i] + np.pi)
        if i + 1 == n_res:
            break
        n_next = _place(n_i, ca_i, c_i, BOND_C_N, ANGLE_CA_C_N, psis[i])
        ca_next = _place(ca_i, c_i, n_next, BOND_N_CA, ANGLE_C_N_CA, np.pi)
        c_next = _place(c_i, n_next, ca_next, BOND_CA_C, ANGLE_N_CA_C, phis[i + 1])
        coords[i + 1] = [n_next, ca_next, c_next, np.zeros(3)]
    return coords


def _chain_residues(
    chain: str,
    resseqs: list[int],
    types: np.ndarray,
    backbone: np.ndarray,
) -> list[Residue]:
    frames = frames_from_backbone(backbone[:, 0], backbone[:, 1], backbone[:, 2])
    out = []
    for i, seq in enumerate(resseqs):
        atoms = {
            "N": backbone[i, 0].copy(),
            "CA": backbone[i, 1].copy(),
            "C": backbone[i, 2].copy(),
            "O": backbone[i, 3].copy(),
            "CB": virtual_cb(backbone[i, 0], backbone[i, 1], backbone[i, 2]),
        }
        out.append(
            Residue(
                aa=int(types[i]),
                chain=chain,
                resseq=seq,
                icode="",
                atoms=atoms,
                frame=frames[i],
                cb_virtual=True,
            )
        )
    return out


def make_toy_complex(
    complex_id: str = "toy",
    cdr_tag: str = "H3",
    cdr_length: int = 6,
    framework_before: int = 6,
    framework_after: int = 5,
    antigen_length: int = 8,
    seed: int = 0,
) -> ComplexInstance:
    """A two-chain complex (antibody chain with the CDR, one antigen chain)."""
    rng = np.random.default_rng(seed)
    chain_type = cdr_chain_type(cdr_tag)
    lo, hi = CDR_TABLES["chothia"][chain_type][cdr_tag]
    if cdr_length < 1 or cdr_length > hi - lo + 1:
        raise ValueError(
            f"cdr_length for {cdr_tag} must lie in [1, {hi - lo + 1}] "
            "(plain numbering carries no insertion codes)"
        )

    n_ab = framework_before + cdr_length + framework_after
    # numbering jumps past the window after the CDR so the annotation
    # captures exactly cdr_length residues
    resseqs = (
        list(range(lo - framework_before, lo))
        + list(range(lo, lo + cdr_length))
        + list(range(hi + 1, hi + 1 + framework_after))
    )
    ab_backbone = grow_backbone(n_ab, rng)
    ab_types = rng.integers(0, 20, size=n_ab)

    ag_backbone = grow_backbone(antigen_length, rng)
    ag_types = rng.integers(0, 20, size=antigen_length)
    # park the antigen a touch under one nanometre from the CDR midpoint
    cdr_mid = ab_backbone[framework_before : framework_before + cdr_length, 1].mean(axis=0)
    ab_centroid = ab_backbone[:, 1].mean(axis=0)
    away = normalize(cdr_mid - ab_centroid)
    shift = cdr_mid + 9.0 * away - ag_backbone[:, 1].mean(axis=0)
    ag_backbone = ag_backbone + shift

    chain_ab = "H" if chain_type == "heavy" else "L"
    residues = _chain_residues(chain_ab, resseqs, ab_types, ab_backbone)
    residues += _chain_residues("A", list(range(1, antigen_length + 1)), ag_types, ag_backbone)

    roles = {chain_ab: chain_type, "A": "antigen"}
    return ComplexInstance(
        complex_id=complex_id,
        residues=residues,
        chain_roles=roles,
        cdr_tag=cdr_tag,
        cdr_start=framework_before,
        cdr_length=cdr_length,
        warnings={},
    )


def write_toy_corpus(out_dir, count: int = 3, seed: int = 0) -> Path:
    """Write PDB files plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    tags = ["H3", "H1", "H2"]
    for k in range(count):
        tag = tags[k % len(tags)]
        inst = make_toy_complex(
            complex_id=f"toy{k:02d}",
            cdr_tag=tag,
            cdr_length=min(6, {"H1": 7, "H2": 5, "H3": 8}[tag]),
            seed=seed + k,
        )
        pdb_path = out / f"{inst.complex_id}.pdb"
        pdb_path.write_text(write_pdb(inst.to_pdb_records()))
        entries.append(
            {
                "id": inst.complex_id,
                "path": pdb_path.name,
                "heavy": "H",
                "light": None,
                "antigen": ["A"],
                "cdr": tag,
                "split": "train" if k + 1 < count else "test",
            }
        )
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=1))
    return manifest


def _selftest_roundtrip(inst: ComplexInstance) -> None:
    text = write_pdb(inst.to_pdb_records())
    parsed = parse_pdb(text)
    assert len(parsed.records) == sum(4 if r.cb_virtual else 5 for r in inst.residues)


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "toy_data"
    path = write_toy_corpus(target)
    print(f"wrote manifest {path}")
