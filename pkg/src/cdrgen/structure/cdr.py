"""CDR annotation from positional ranges on author residue numbering.

The default table is the Chothia definition; ranges are inclusive on
author numbering (insertion codes inherit the range of their base number).
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["CDR_TABLES", "CdrAnnotation", "AnnotationError", "annotate_cdrs", "cdr_chain_type"]


class AnnotationError(ValueError):
    pass


CDR_TABLES: dict[str, dict[str, dict[str, tuple[int, int]]]] = {
    "chothia": {
        "heavy": {"H1": (26, 32), "H2": (52, 56), "H3": (95, 102)},
        "light": {"L1": (24, 34), "L2": (50, 56), "L3": (89, 97)},
    }
}


def cdr_chain_type(tag: str) -> str:
    if tag in ("H1", "H2", "H3"):
        return "heavy"
    if tag in ("L1", "L2", "L3"):
        return "light"
    raise AnnotationError(f"unknown CDR tag {tag!r}")


@dataclass(frozen=True)
class CdrAnnotation:
    scheme: str
    chain_type: str
    ranges: dict[str, tuple[int, int]]  # tag -> (first index, last index) in the chain

    def range_for(self, tag: str) -> tuple[int, int]:
        if tag not in CDR_TABLES[self.scheme][self.chain_type]:
            raise AnnotationError(
                f"CDR {tag} is not defined for a {self.chain_type} chain"
            )
        if tag not in self.ranges:
            raise AnnotationError(f"CDR {tag} not present in this chain's numbering")
        return self.ranges[tag]


def annotate_cdrs(
    numbering: list[tuple[int, str]],
    chain_type: str,
    scheme: str = "chothia",
) -> CdrAnnotation:
    """Locate CDR index ranges in a chain given its author numbering.

    `numbering` lists (resseq, icode) per residue in chain order. Returns
    index ranges into that list; CDRs whose positional window matches no
    residue are omitted.
    """
    if scheme not in CDR_TABLES:
        raise AnnotationError(f"unknown numbering scheme {scheme!r}")
    if chain_type not in CDR_TABLES[scheme]:
        raise AnnotationError(f"chain type must be 'heavy' or 'light', got {chain_type!r}")
    table = CDR_TABLES[scheme][chain_type]
    if not numbering:
        raise AnnotationError("empty chain")
    first_start = min(lo for lo, _ in table.values())
    if max(seq for seq, _ in numbering) < first_start:
        raise AnnotationError(
            f"chain too short for the {scheme} scheme "
            f"(numbering ends before position {first_start})"
        )
    ranges: dict[str, tuple[int, int]] = {}
    for tag, (lo, hi) in table.items():
        idx = [i for i, (seq, _) in enumerate(numbering) if lo <= seq <= hi]
        if not idx:
            continue
        if idx[-1] - idx[0] + 1 != len(idx):
            raise AnnotationError(f"CDR {tag} positions are not contiguous in the chain")
        ranges[tag] = (idx[0], idx[-1])
    return CdrAnnotation(scheme=scheme, chain_type=chain_type, ranges=ranges)
