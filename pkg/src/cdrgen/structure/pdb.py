"""Fixed-column PDB reading and writing (ATOM records, format 3.3).

Only the first MODEL of a multi-model file is read; HETATM and every other
record type are counted but not parsed. parse -> write -> parse is an
identity on the record list, since coordinates are written back with the
same three-decimal precision they were read with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = ["AtomRecord", "ParseResult", "ParseError", "parse_pdb", "write_pdb"]


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class AtomRecord:
    serial: int
    name: str
    resname: str
    chain: str
    resseq: int
    icode: str
    x: float
    y: float
    z: float
    occupancy: float
    bfactor: float
    element: str


@dataclass
class ParseResult:
    records: list[AtomRecord]
    skipped: dict[str, int] = field(default_factory=dict)

    def chains(self) -> list[str]:
        seen: list[str] = []
        for r in self.records:
            if r.chain not in seen:
                seen.append(r.chain)
        return seen

    def for_chain(self, chain: str) -> list[AtomRecord]:
        return [r for r in self.records if r.chain == chain]


def _field(line: str, lo: int, hi: int) -> str:
    return line[lo:hi].strip()


def _parse_atom_line(line: str, lineno: int) -> AtomRecord:
    if len(line) < 54:
        raise ParseError(f"line {lineno}: ATOM record shorter than coordinate fields")
    try:
        serial = int(_field(line, 6, 11))
        resseq = int(_field(line, 22, 26))
        x = float(_field(line, 30, 38))
        y = float(_field(line, 38, 46))
        z = float(_field(line, 46, 54))
        occ_text = _field(line, 54, 60)
        bfac_text = _field(line, 60, 66)
        occupancy = float(occ_text) if occ_text else 1.0
        bfactor = float(bfac_text) if bfac_text else 0.0
    except ValueError as exc:
        raise ParseError(f"line {lineno}: malformed numeric field ({exc})") from exc
    return AtomRecord(
        serial=serial,
        name=_field(line, 12, 16),
        resname=_field(line, 17, 20),
        chain=line[21] if len(line) > 21 else " ",
        resseq=resseq,
        icode=_field(line, 26, 27),
        x=x,
        y=y,
        z=z,
        occupancy=occupancy,
        bfactor=bfactor,
        element=_field(line, 76, 78),
    )


def parse_pdb(text: str) -> ParseResult:
    records: list[AtomRecord] = []
    skipped: dict[str, int] = {}
    in_first_model = True
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tag = line[:6].strip()
        if tag == "ENDMDL":
            in_first_model = False
            continue
        if not in_first_model:
            skipped["after_first_model"] = skipped.get("after_first_model", 0) + 1
            continue
        if tag == "ATOM":
            records.append(_parse_atom_line(line, lineno))
        else:
            skipped[tag or "blank"] = skipped.get(tag or "blank", 0) + 1
    if not records:
        raise ParseError("no ATOM records found")
    return ParseResult(records=records, skipped=skipped)


def _format_name(name: str) -> str:
    # one-letter elements start in column 14, four-character names in column 13
    if len(name) >= 4:
        return name[:4]
    return f" {name:<3}"


def write_pdb(records: list[AtomRecord]) -> str:
    lines = []
    for r in records:
        for coord in (r.x, r.y, r.z):
            if not -1000.0 < coord < 10000.0:
                raise ParseError(f"coordinate {coord} does not fit fixed PDB columns")
        lines.append(
            f"ATOM  {r.serial:>5} {_format_name(r.name)} {r.resname:>3} {r.chain}"
            f"{r.resseq:>4}{r.icode:<1}   {r.x:8.3f}{r.y:8.3f}{r.z:8.3f}"
            f"{r.occupancy:6.2f}{r.bfactor:6.2f}          {r.element:>2}"
        )
    lines.append("END")
    return "\n".join(lines) + "\n"
