from .cdr import AnnotationError, CDR_TABLES, CdrAnnotation, annotate_cdrs, cdr_chain_type
from .instance import (
    BuildError,
    ComplexInstance,
    FRAGMENT_ANTIGEN,
    FRAGMENT_GENERATED,
    FRAGMENT_HEAVY,
    FRAGMENT_LIGHT,
    Residue,
    build_instance,
    replace_cdr,
)
from .pdb import AtomRecord, ParseError, ParseResult, parse_pdb, write_pdb
from .residues import (
    AA1,
    AA1_TO_INDEX,
    AA3,
    AA3_TO_INDEX,
    ATOM_VOCAB,
    BACKBONE_SLOTS,
    NUM_AA_TYPES,
    NUM_ATOM_TYPES,
    ideal_backbone,
    virtual_cb,
)

__all__ = [
    "AnnotationError",
    "CDR_TABLES",
    "CdrAnnotation",
    "annotate_cdrs",
    "cdr_chain_type",
    "BuildError",
    "ComplexInstance",
    "FRAGMENT_ANTIGEN",
    "FRAGMENT_GENERATED",
    "FRAGMENT_HEAVY",
    "FRAGMENT_LIGHT",
    "Residue",
    "build_instance",
    "replace_cdr",
    "AtomRecord",
    "ParseError",
    "ParseResult",
    "parse_pdb",
    "write_pdb",
    "AA1",
    "AA1_TO_INDEX",
    "AA3",
    "AA3_TO_INDEX",
    "ATOM_VOCAB",
    "BACKBONE_SLOTS",
    "NUM_AA_TYPES",
    "NUM_ATOM_TYPES",
    "ideal_backbone",
    "virtual_cb",
]
