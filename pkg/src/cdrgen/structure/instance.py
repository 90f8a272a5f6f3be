"""Design-ready antibody-antigen complexes.

A ComplexInstance holds one complex with residues in a fixed order (heavy
chain, then light chain if present, then antigen chains), per-residue
backbone coordinates and orientation frames, and the chosen CDR span.
Instances serialize to a versioned JSON document and back without loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import GeometryError, frame_from_backbone
from .cdr import AnnotationError, annotate_cdrs, cdr_chain_type
from .pdb import AtomRecord, ParseError, ParseResult
from .residues import (
    AA1,
    AA3,
    AA3_TO_INDEX,
    BACKBONE_SLOTS,
    NONCANONICAL_TO_CANONICAL,
    ideal_backbone,
    virtual_cb,
)

__all__ = ["Residue", "ComplexInstance", "BuildError", "build_instance", "replace_cdr"]

INSTANCE_FORMAT = "cdr-instance/1"

FRAGMENT_ANTIGEN = 0
FRAGMENT_HEAVY = 1
FRAGMENT_LIGHT = 2
FRAGMENT_GENERATED = 3


class BuildError(ValueError):
    pass


@dataclass
class Residue:
    aa: int
    chain: str
    resseq: int
    icode: str
    atoms: dict[str, np.ndarray]  # backbone slots N, CA, C, O, CB
    frame: np.ndarray
    cb_virtual: bool = False

    @property
    def ca(self) -> np.ndarray:
        return self.atoms["CA"]

    def letter(self) -> str:
        return AA1[self.aa]


@dataclass
class ComplexInstance:
    complex_id: str
    residues: list[Residue]
    chain_roles: dict[str, str]  # chain id -> heavy | light | antigen
    cdr_tag: str
    cdr_start: int
    cdr_length: int
    warnings: dict[str, int] = field(default_factory=dict)

    # ---- basic views -----------------------------------------------------

    def __len__(self) -> int:
        return len(self.residues)

    @property
    def cdr_indices(self) -> np.ndarray:
        return np.arange(self.cdr_start, self.cdr_start + self.cdr_length)

    def cdr_sequence(self) -> str:
        return "".join(self.residues[i].letter() for i in self.cdr_indices)

    def sequence(self) -> str:
        return "".join(r.letter() for r in self.residues)

    def chain_of(self, index: int) -> str:
        return self.residues[index].chain

    # ---- packed arrays -----------------------------------------------------

    def aa_array(self) -> np.ndarray:
        return np.array([r.aa for r in self.residues], dtype=np.int64)

    def ca_array(self) -> np.ndarray:
        return np.stack([r.ca for r in self.residues])

    def frame_array(self) -> np.ndarray:
        return np.stack([r.frame for r in self.residues])

    def atom_array(self) -> np.ndarray:
        """(N, 5, 3) backbone coordinates in slot order N, CA, C, O, CB."""
        return np.stack(
            [[r.atoms[slot] for slot in BACKBONE_SLOTS] for r in self.residues]
        )

    def cb_virtual_array(self) -> np.ndarray:
        return np.array([r.cb_virtual for r in self.residues], dtype=bool)

    def chain_ordinals(self) -> np.ndarray:
        order: dict[str, int] = {}
        out = np.empty(len(self.residues), dtype=np.int64)
        for i, r in enumerate(self.residues):
            if r.chain not in order:
                order[r.chain] = len(order)
            out[i] = order[r.chain]
        return out

    def position_in_chain(self) -> np.ndarray:
        counts: dict[str, int] = {}
        out = np.empty(len(self.residues), dtype=np.int64)
        for i, r in enumerate(self.residues):
            k = counts.get(r.chain, 0)
            out[i] = k
            counts[r.chain] = k + 1
        return out

    def fragment_types(self) -> np.ndarray:
        out = np.empty(len(self.residues), dtype=np.int64)
        for i, r in enumerate(self.residues):
            role = self.chain_roles[r.chain]
            if role == "heavy":
                out[i] = FRAGMENT_HEAVY
            elif role == "light":
                out[i] = FRAGMENT_LIGHT
            else:
                out[i] = FRAGMENT_ANTIGEN
        out[self.cdr_indices] = FRAGMENT_GENERATED
        return out

    # ---- transforms ----------------------------------------------------------

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "ComplexInstance":
        """Rigidly move the whole complex: x -> R x + t, frames -> R O."""
        R = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        residues = [
            Residue(
                aa=r.aa,
                chain=r.chain,
                resseq=r.resseq,
                icode=r.icode,
                atoms={k: R @ v + t for k, v in r.atoms.items()},
                frame=R @ r.frame,
                cb_virtual=r.cb_virtual,
            )
            for r in self.residues
        ]
        return ComplexInstance(
            complex_id=self.complex_id,
            residues=residues,
            chain_roles=dict(self.chain_roles),
            cdr_tag=self.cdr_tag,
            cdr_start=self.cdr_start,
            cdr_length=self.cdr_length,
            warnings=dict(self.warnings),
        )

    # ---- serialization -----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": INSTANCE_FORMAT,
            "complex_id": self.complex_id,
            "chain_roles": self.chain_roles,
            "cdr": {
                "tag": self.cdr_tag,
                "start": self.cdr_start,
                "length": self.cdr_length,
            },
            "warnings": self.warnings,
            "residues": [
                {
                    "aa": AA3[r.aa],
                    "chain": r.chain,
                    "resseq": r.resseq,
                    "icode": r.icode,
                    "atoms": {k: list(v) for k, v in r.atoms.items()},
                    "frame": [list(row) for row in r.frame],
                    "cb_virtual": r.cb_virtual,
                }
                for r in self.residues
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ComplexInstance":
        doc = json.loads(text)
        if doc.get("format") != INSTANCE_FORMAT:
            raise BuildError(
                f"unsupported instance format {doc.get('format')!r} (expected {INSTANCE_FORMAT})"
            )
        residues = [
            Residue(
                aa=AA3_TO_INDEX[r["aa"]],
                chain=r["chain"],
                resseq=r["resseq"],
                icode=r["icode"],
                atoms={k: np.array(v, dtype=np.float64) for k, v in r["atoms"].items()},
                frame=np.array(r["frame"], dtype=np.float64),
                cb_virtual=r["cb_virtual"],
            )
            for r in doc["residues"]
        ]
        return cls(
            complex_id=doc["complex_id"],
            residues=residues,
            chain_roles=doc["chain_roles"],
            cdr_tag=doc["cdr"]["tag"],
            cdr_start=doc["cdr"]["start"],
            cdr_length=doc["cdr"]["length"],
            warnings=doc.get("warnings", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ComplexInstance":
        return cls.from_json(Path(path).read_text())

    def to_pdb_records(self) -> list[AtomRecord]:
        records = []
        serial = 1
        for r in self.residues:
            for slot in BACKBONE_SLOTS:
                if slot == "CB" and r.cb_virtual:
                    continue  # virtual atoms are a modelling device, not structure
                p = r.atoms[slot]
                records.append(
                    AtomRecord(
                        serial=serial,
                        name=slot,
                        resname=AA3[r.aa],
                        chain=r.chain,
                        resseq=r.resseq,
                        icode=r.icode,
                        x=round(float(p[0]), 3),
                        y=round(float(p[1]), 3),
                        z=round(float(p[2]), 3),
                        occupancy=1.0,
                        bfactor=0.0,
                        element=slot[0],
                    )
                )
                serial += 1
        return records


# ---- building from parsed PDB data -------------------------------------------


def _warn(warnings: dict[str, int], key: str) -> None:
    warnings[key] = warnings.get(key, 0) + 1


def _collect_chain(
    result: ParseResult,
    chain: str,
    warnings: dict[str, int],
) -> list[Residue]:
    """Group a chain's records into residues with complete backbones."""
    groups: dict[tuple[int, str], dict] = {}
    order: list[tuple[int, str]] = []
    for rec in result.for_chain(chain):
        key = (rec.resseq, rec.icode)
        if key not in groups:
            groups[key] = {"resname": rec.resname, "atoms": {}}
            order.append(key)
        g = groups[key]
        if rec.name in g["atoms"]:
            _warn(warnings, "duplicate_atom_name")  # altloc copies keep the first
            continue
        g["atoms"][rec.name] = np.array([rec.x, rec.y, rec.z])

    order.sort(key=lambda k: (k[0], k[1]))
    residues: list[Residue] = []
    for key in order:
        g = groups[key]
        resname = g["resname"]
        if resname not in AA3_TO_INDEX:
            mapped = NONCANONICAL_TO_CANONICAL.get(resname)
            if mapped is None:
                _warn(warnings, "unmappable_residue_dropped")
                continue
            _warn(warnings, "noncanonical_mapped")
            resname = mapped
        atoms = g["atoms"]
        if any(slot not in atoms for slot in ("N", "CA", "C")):
            _warn(warnings, "incomplete_backbone_dropped")
            continue
        try:
            frame = frame_from_backbone(atoms["N"], atoms["CA"], atoms["C"])
        except GeometryError:
            _warn(warnings, "degenerate_backbone_dropped")
            continue
        backbone = {slot: atoms[slot] for slot in ("N", "CA", "C")}
        if "O" in atoms:
            backbone["O"] = atoms["O"]
        else:
            _warn(warnings, "rebuilt_missing_O")
            backbone["O"] = ideal_backbone(atoms["CA"], frame)["O"]
        cb_virtual = False
        if resname != "GLY" and "CB" in atoms:
            backbone["CB"] = atoms["CB"]
        else:
            if resname != "GLY":
                _warn(warnings, "rebuilt_missing_CB")
            backbone["CB"] = virtual_cb(atoms["N"], atoms["CA"], atoms["C"])
            cb_virtual = True
        residues.append(
            Residue(
                aa=AA3_TO_INDEX[resname],
                chain=chain,
                resseq=key[0],
                icode=key[1],
                atoms=backbone,
                frame=frame,
                cb_virtual=cb_virtual,
            )
        )
    return residues


def build_instance(
    result: ParseResult,
    complex_id: str,
    heavy_chain: str | None,
    light_chain: str | None,
    antigen_chains: list[str],
    cdr_tag: str,
) -> ComplexInstance:
    """Assemble a design-ready complex from parsed records and chain roles."""
    chain_type = cdr_chain_type(cdr_tag)
    if chain_type == "heavy" and heavy_chain is None:
        raise BuildError(f"CDR {cdr_tag} needs a heavy chain, none was given")
    if chain_type == "light" and light_chain is None:
        raise BuildError(f"CDR {cdr_tag} needs a light chain, none was given")

    present = result.chains()
    configured = [c for c in [heavy_chain, light_chain] if c is not None] + list(antigen_chains)
    for c in configured:
        if c not in present:
            raise BuildError(f"chain {c!r} not found in structure (has {present})")
    if len(set(configured)) != len(configured):
        raise BuildError("a chain may only appear in one role")

    warnings: dict[str, int] = {}
    residues: list[Residue] = []
    roles: dict[str, str] = {}
    cdr_chain = heavy_chain if chain_type == "heavy" else light_chain
    cdr_span: tuple[int, int] | None = None

    for chain, role in (
        [(heavy_chain, "heavy")] if heavy_chain else []
    ) + ([(light_chain, "light")] if light_chain else []) + [
        (c, "antigen") for c in antigen_chains
    ]:
        chain_residues = _collect_chain(result, chain, warnings)
        if not chain_residues:
            raise BuildError(f"chain {chain!r} has no usable residues")
        roles[chain] = role
        if chain == cdr_chain:
            numbering = [(r.resseq, r.icode) for r in chain_residues]
            try:
                annotation = annotate_cdrs(numbering, chain_type)
                lo, hi = annotation.range_for(cdr_tag)
            except AnnotationError as exc:
                raise BuildError(str(exc)) from exc
            cdr_span = (len(residues) + lo, len(residues) + hi)
        residues.extend(chain_residues)

    assert cdr_span is not None
    start, end = cdr_span
    length = end - start + 1
    if length < 1:
        raise BuildError(f"CDR {cdr_tag} range is empty")
    return ComplexInstance(
        complex_id=complex_id,
        residues=residues,
        chain_roles=roles,
        cdr_tag=cdr_tag,
        cdr_start=start,
        cdr_length=length,
        warnings=warnings,
    )


def replace_cdr(
    instance: ComplexInstance,
    types: np.ndarray,
    ca: np.ndarray,
    frames: np.ndarray,
) -> ComplexInstance:
    """New instance with the CDR rebuilt from designed types, positions, frames.

    Backbone atoms for the replaced span are placed from the ideal local
    template, so recomputing frames from them reproduces `frames` exactly.
    """
    types = np.asarray(types)
    ca = np.asarray(ca, dtype=np.float64)
    frames = np.asarray(frames, dtype=np.float64)
    m = instance.cdr_length
    if types.shape != (m,) or ca.shape != (m, 3) or frames.shape != (m, 3, 3):
        raise BuildError("designed CDR arrays must match the native CDR length")
    residues = list(instance.residues)
    for k, idx in enumerate(instance.cdr_indices):
        old = residues[idx]
        atoms = ideal_backbone(ca[k], frames[k])
        residues[idx] = Residue(
            aa=int(types[k]),
            chain=old.chain,
            resseq=old.resseq,
            icode=old.icode,
            atoms=atoms,
            frame=frames[k].copy(),
            cb_virtual=True,
        )
    return ComplexInstance(
        complex_id=instance.complex_id,
        residues=residues,
        chain_roles=dict(instance.chain_roles),
        cdr_tag=instance.cdr_tag,
        cdr_start=instance.cdr_start,
        cdr_length=instance.cdr_length,
        warnings=dict(instance.warnings),
    )
