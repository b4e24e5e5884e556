"""Molecular data model plus JSONL and SDF V2000 readers and writers.

A Molecule is an immutable record: atoms (atomic number, formal charge,
aromatic flag), undirected typed bonds, zero or more conformers (N x 3
coordinate arrays in Angstroms), and an optional label map for
downstream tasks. Bond connectivity is shared across conformers.

parse -> write -> parse is a fixed point for both file formats. SDF
carries coordinates, so writing SDF requires at least one conformer and
coordinates are rounded to the format's 4 decimals on the first pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BOND_ORDERS", "AtomFeature", "Conformer", "Molecule", "MoleculeError",
    "MoleculeParseError", "molecule_from_record", "molecule_to_record",
    "parse_jsonl", "write_jsonl", "parse_sdf_v2000", "write_sdf_v2000",
    "adjacency", "degrees", "SYMBOL_TO_Z", "Z_TO_SYMBOL", "MAX_Z",
]

MAX_Z = 118
BOND_ORDERS = ("single", "double", "triple", "aromatic", "other")

_ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe",
    "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr",
    "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm",
    "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",
    "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn",
    "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf",
    "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
Z_TO_SYMBOL = {z + 1: sym for z, sym in enumerate(_ELEMENTS)}
SYMBOL_TO_Z = {sym.upper(): z for z, sym in Z_TO_SYMBOL.items()}

# V2000 bond type codes; 8 is "any", used for order "other"
_BOND_CODE = {"single": 1, "double": 2, "triple": 3, "aromatic": 4, "other": 8}
_CODE_BOND = {v: k for k, v in _BOND_CODE.items()}


class MoleculeError(ValueError):
    """Raised when a molecule violates the data model."""


class MoleculeParseError(MoleculeError):
    """Parse failure; carries the offending location."""

    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


@dataclass(frozen=True)
class AtomFeature:
    z: int
    charge: int = 0
    aromatic: bool = False


@dataclass(frozen=True, eq=False)
class Conformer:
    coords: np.ndarray  # (N, 3) float Angstroms

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise MoleculeError(f"conformer coords must be (N, 3), got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    def __eq__(self, other):
        return isinstance(other, Conformer) and np.array_equal(self.coords, other.coords)


@dataclass(frozen=True)
class Molecule:
    id: str
    atoms: tuple[AtomFeature, ...]
    bonds: tuple[tuple[int, int, str], ...] = ()
    conformers: tuple[Conformer, ...] = ()
    labels: dict[str, float | int | None] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "bonds", tuple(tuple(b) for b in self.bonds))
        object.__setattr__(self, "conformers", tuple(self.conformers))
        object.__setattr__(self, "labels", dict(self.labels))
        _validate(self)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)


def _validate(m: Molecule) -> None:
    if not isinstance(m.id, str) or not m.id:
        raise MoleculeError("molecule id must be a non-empty string")
    n = len(m.atoms)
    if n == 0:
        raise MoleculeError(f"{m.id}: molecule has no atoms")
    for i, a in enumerate(m.atoms):
        if not isinstance(a, AtomFeature):
            raise MoleculeError(f"{m.id}: atom {i} is not an AtomFeature")
        if not 1 <= a.z <= MAX_Z:
            raise MoleculeError(f"{m.id}: atom {i} atomic number {a.z} outside [1, {MAX_Z}]")
        if not isinstance(a.charge, int):
            raise MoleculeError(f"{m.id}: atom {i} charge must be an int")
    seen = set()
    for u, v, order in m.bonds:
        if not (isinstance(u, int) and isinstance(v, int)):
            raise MoleculeError(f"{m.id}: bond endpoints must be ints, got ({u}, {v})")
        if not (0 <= u < n and 0 <= v < n):
            raise MoleculeError(f"{m.id}: bond ({u}, {v}) endpoint out of range for {n} atoms")
        if u == v:
            raise MoleculeError(f"{m.id}: self-bond at atom {u}")
        if order not in BOND_ORDERS:
            raise MoleculeError(f"{m.id}: unknown bond order {order!r}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise MoleculeError(f"{m.id}: duplicate bond {key}")
        seen.add(key)
    for c, conf in enumerate(m.conformers):
        if not isinstance(conf, Conformer):
            raise MoleculeError(f"{m.id}: conformer {c} is not a Conformer")
        if conf.coords.shape[0] != n:
            raise MoleculeError(
                f"{m.id}: conformer {c} has {conf.coords.shape[0]} rows for {n} atoms")
        if not np.isfinite(conf.coords).all():
            raise MoleculeError(f"{m.id}: conformer {c} has non-finite coordinates")


def adjacency(m: Molecule) -> list[list[int]]:
    """Sorted symmetric neighbor lists."""
    adj: list[list[int]] = [[] for _ in range(m.n_atoms)]
    for u, v, _ in m.bonds:
        adj[u].append(v)
        adj[v].append(u)
    for row in adj:
        row.sort()
    return adj


def degrees(m: Molecule) -> list[int]:
    deg = [0] * m.n_atoms
    for u, v, _ in m.bonds:
        deg[u] += 1
        deg[v] += 1
    return deg


# ---- JSONL ----

def molecule_from_record(rec: dict, where: str = "record") -> Molecule:
    if not isinstance(rec, dict):
        raise MoleculeParseError(where, "record is not a JSON object")
    try:
        mol_id = rec["id"]
        raw_atoms = rec["atoms"]
    except KeyError as exc:
        raise MoleculeParseError(where, f"missing required field {exc.args[0]!r}") from None
    if not isinstance(raw_atoms, list) or not raw_atoms:
        raise MoleculeParseError(where, "'atoms' must be a non-empty list")
    atoms = []
    for i, a in enumerate(raw_atoms):
        if not isinstance(a, dict) or "z" not in a:
            raise MoleculeParseError(where, f"atom {i} needs a 'z' field")
        z = a["z"]
        charge = a.get("charge", 0)
        aromatic = a.get("aromatic", False)
        if not isinstance(z, int) or isinstance(z, bool):
            raise MoleculeParseError(where, f"atom {i} 'z' must be an int")
        if not isinstance(charge, int) or isinstance(charge, bool):
            raise MoleculeParseError(where, f"atom {i} 'charge' must be an int")
        if not isinstance(aromatic, bool):
            raise MoleculeParseError(where, f"atom {i} 'aromatic' must be a bool")
        atoms.append(AtomFeature(z=z, charge=charge, aromatic=aromatic))
    bonds = []
    for j, b in enumerate(rec.get("bonds", [])):
        if (not isinstance(b, (list, tuple))) or len(b) != 3:
            raise MoleculeParseError(where, f"bond {j} must be [u, v, order]")
        u, v, order = b
        if not isinstance(u, int) or not isinstance(v, int) or isinstance(u, bool) \
                or isinstance(v, bool) or not isinstance(order, str):
            raise MoleculeParseError(where, f"bond {j} must be [int, int, str]")
        bonds.append((u, v, order))
    conformers = []
    for c, coords in enumerate(rec.get("conformers", [])):
        try:
            arr = np.asarray(coords, dtype=np.float64)
        except (TypeError, ValueError):
            raise MoleculeParseError(where, f"conformer {c} is not numeric") from None
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise MoleculeParseError(where, f"conformer {c} must be an N x 3 array")
        conformers.append(Conformer(arr))
    labels = rec.get("labels", {})
    if labels is None:
        labels = {}
    if not isinstance(labels, dict):
        raise MoleculeParseError(where, "'labels' must be an object")
    for k, val in labels.items():
        if val is not None and not isinstance(val, (int, float)):
            raise MoleculeParseError(where, f"label {k!r} must be a number or null")
        if isinstance(val, float) and not math.isfinite(val):
            raise MoleculeParseError(where, f"label {k!r} is not finite")
    if not isinstance(mol_id, str):
        raise MoleculeParseError(where, "'id' must be a string")
    try:
        return Molecule(id=mol_id, atoms=tuple(atoms), bonds=tuple(bonds),
                        conformers=tuple(conformers), labels=dict(labels))
    except MoleculeError as exc:
        raise MoleculeParseError(where, str(exc)) from None


def molecule_to_record(m: Molecule) -> dict:
    return {
        "id": m.id,
        "atoms": [{"z": a.z, "charge": a.charge, "aromatic": a.aromatic} for a in m.atoms],
        "bonds": [[u, v, order] for u, v, order in m.bonds],
        "conformers": [c.coords.tolist() for c in m.conformers],
        "labels": dict(m.labels),
    }


def parse_jsonl(path):
    """Yield Molecules from a JSONL file; errors carry the line number."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{line_no}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MoleculeParseError(where, f"invalid JSON: {exc.msg}") from None
            yield molecule_from_record(rec, where)


def write_jsonl(path, molecules) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in molecules:
            fh.write(json.dumps(molecule_to_record(m)) + "\n")


# ---- SDF V2000 subset ----

def _connectivity_key(mol_id, atoms, bonds, charges):
    return (mol_id, tuple(atoms), tuple(bonds), tuple(charges))


def parse_sdf_v2000(path):
    """Yield Molecules from an SDF file (V2000 subset).

    Consecutive records with identical id and connectivity merge into one
    multi-conformer Molecule. Data fields other than ``> <id>`` are ignored.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0
    n_record = 0
    pending_key = None
    pending: dict | None = None

    def flush():
        nonlocal pending, pending_key
        if pending is None:
            return None
        atoms = tuple(AtomFeature(z=z, charge=pending["charges"][i],
                                  aromatic=pending["aromatic"][i])
                      for i, z in enumerate(pending["zs"]))
        m = Molecule(id=pending["id"], atoms=atoms, bonds=tuple(pending["bonds"]),
                     conformers=tuple(Conformer(c) for c in pending["coords"]))
        pending, pending_key = None, None
        return m

    while pos < len(lines):
        # skip blank padding between records
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            break
        n_record += 1
        where = f"{path}: record {n_record} (line {pos + 1})"
        if pos + 3 >= len(lines):
            raise MoleculeParseError(where, "truncated header block")
        title = lines[pos].strip()
        counts_line = lines[pos + 3]
        pos += 4
        try:
            n_atoms = int(counts_line[0:3])
            n_bonds = int(counts_line[3:6])
        except (ValueError, IndexError):
            raise MoleculeParseError(where, f"bad counts line {counts_line!r}") from None
        if n_atoms <= 0:
            raise MoleculeParseError(where, "record has no atoms")
        if pos + n_atoms + n_bonds > len(lines):
            raise MoleculeParseError(where, "truncated atom/bond block")
        coords = np.zeros((n_atoms, 3), dtype=np.float64)
        zs = []
        for i in range(n_atoms):
            ln = lines[pos + i]
            try:
                coords[i, 0] = float(ln[0:10])
                coords[i, 1] = float(ln[10:20])
                coords[i, 2] = float(ln[20:30])
                symbol = ln[31:34].strip()
            except (ValueError, IndexError):
                raise MoleculeParseError(where, f"bad atom line {i + 1}: {ln!r}") from None
            z = SYMBOL_TO_Z.get(symbol.upper())
            if z is None:
                raise MoleculeParseError(where, f"unknown element symbol {symbol!r}")
            zs.append(z)
        pos += n_atoms
        bonds = []
        for j in range(n_bonds):
            ln = lines[pos + j]
            try:
                u = int(ln[0:3])
                v = int(ln[3:6])
                code = int(ln[6:9])
            except (ValueError, IndexError):
                raise MoleculeParseError(where, f"bad bond line {j + 1}: {ln!r}") from None
            if u < 1 or v < 1 or u > n_atoms or v > n_atoms:
                raise MoleculeParseError(
                    where, f"bond {j + 1} references atom {min(u, v)} (atoms are 1-indexed)")
            bonds.append((u - 1, v - 1, _CODE_BOND.get(code, "other")))
        pos += n_bonds
        charges = [0] * n_atoms
        mol_id = title
        # properties block up to M END, then data fields up to $$$$
        while pos < len(lines) and lines[pos].strip() != "M  END":
            ln = lines[pos]
            if ln.startswith("M  CHG"):
                try:
                    count = int(ln[6:9])
                    for t in range(count):
                        at = int(ln[9 + 8 * t:13 + 8 * t])
                        ch = int(ln[13 + 8 * t:17 + 8 * t])
                        charges[at - 1] = ch
                except (ValueError, IndexError):
                    raise MoleculeParseError(where, f"bad M  CHG line: {ln!r}") from None
            pos += 1
        if pos >= len(lines):
            raise MoleculeParseError(where, "missing 'M  END'")
        pos += 1
        while pos < len(lines) and lines[pos].strip() != "$$$$":
            if lines[pos].startswith("> ") and "<id>" in lines[pos]:
                if pos + 1 < len(lines):
                    mol_id = lines[pos + 1].strip()
                    pos += 1
            pos += 1
        if pos >= len(lines):
            raise MoleculeParseError(where, "missing '$$$$' terminator")
        pos += 1
        if not mol_id:
            mol_id = f"mol{n_record}"
        aromatic = [False] * n_atoms
        for u, v, order in bonds:
            if order == "aromatic":
                aromatic[u] = True
                aromatic[v] = True
        key = _connectivity_key(mol_id, zs, bonds, charges)
        if pending is not None and key == pending_key:
            pending["coords"].append(coords)
            continue
        done = flush()
        pending_key = key
        pending = {"id": mol_id, "zs": zs, "bonds": bonds, "charges": charges,
                   "aromatic": aromatic, "coords": [coords]}
        if done is not None:
            yield done
    done = flush()
    if done is not None:
        yield done


def write_sdf_v2000(path, molecules) -> None:
    """Write molecules as V2000 records, one record per conformer."""
    with open(path, "w", encoding="utf-8") as fh:
        for m in molecules:
            if not m.conformers:
                raise MoleculeError(f"{m.id}: SDF needs at least one conformer")
            for conf in m.conformers:
                fh.write(f"{m.id}\n\n\n")
                fh.write(f"{m.n_atoms:>3d}{len(m.bonds):>3d}  0  0  0  0  0  0  0  0999 V2000\n")
                for i, a in enumerate(m.atoms):
                    x, y, z = conf.coords[i]
                    sym = Z_TO_SYMBOL[a.z]
                    fh.write(f"{x:>10.4f}{y:>10.4f}{z:>10.4f} {sym:<3s} 0  0  0  0  0  0"
                             "  0  0  0  0  0  0\n")
                for u, v, order in m.bonds:
                    fh.write(f"{u + 1:>3d}{v + 1:>3d}{_BOND_CODE[order]:>3d}  0\n")
                charged = [(i + 1, a.charge) for i, a in enumerate(m.atoms) if a.charge]
                for lo in range(0, len(charged), 8):
                    chunk = charged[lo:lo + 8]
                    fh.write(f"M  CHG{len(chunk):>3d}" +
                             "".join(f"{at:>4d}{ch:>4d}" for at, ch in chunk) + "\n")
                fh.write("M  END\n")
                fh.write("> <id>\n")
                fh.write(f"{m.id}\n\n")
                fh.write("$$$$\n")
