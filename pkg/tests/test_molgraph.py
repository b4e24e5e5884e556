"""Molecule data model, JSONL and SDF V2000 round trips, parse errors."""

import numpy as np
import pytest

from cfree.molgraph import (AtomFeature, Conformer, Molecule, MoleculeError,
                            MoleculeParseError, adjacency, degrees,
                            molecule_from_record, molecule_to_record,
                            parse_jsonl, parse_sdf_v2000, write_jsonl,
                            write_sdf_v2000)


def _ethanolamine():
    # HOCH2CH2NH2 heavy atoms: O-C-C-N chain
    return Molecule(
        id="etha",
        atoms=(AtomFeature(8), AtomFeature(6), AtomFeature(6), AtomFeature(7, charge=1)),
        bonds=((0, 1, "single"), (1, 2, "single"), (2, 3, "single")),
        conformers=(Conformer(np.array([[0.0, 0.0, 0.0], [1.4, 0.0, 0.0],
                                        [2.1, 1.2, 0.0], [3.5, 1.2, 0.25]])),),
        labels={"logp": -1.1, "tox": 0},
    )


def _benzene():
    atoms = tuple(AtomFeature(6, aromatic=True) for _ in range(6))
    bonds = tuple((i, (i + 1) % 6, "aromatic") for i in range(6))
    theta = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    ring = np.stack([1.39 * np.cos(theta), 1.39 * np.sin(theta), np.zeros(6)], axis=1)
    return Molecule(id="benzene", atoms=atoms, bonds=bonds,
                    conformers=(Conformer(ring.round(4)), Conformer((ring * 1.001).round(4))))


# ---- data model ----

def test_validation_rejects_bad_molecules():
    a2 = (AtomFeature(6), AtomFeature(6))
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=(), bonds=())
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=(AtomFeature(0),), bonds=())
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=(AtomFeature(200),), bonds=())
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=a2, bonds=((0, 0, "single"),))
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=a2, bonds=((0, 2, "single"),))
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=a2, bonds=((0, 1, "quadruple"),))
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=a2, bonds=((0, 1, "single"), (1, 0, "double")))
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=a2, bonds=(), conformers=(Conformer(np.zeros((3, 3))),))
    with pytest.raises(MoleculeError):
        Molecule(id="x", atoms=a2, bonds=(),
                 conformers=(Conformer(np.array([[0.0, 0.0, np.nan]] * 2)),))
    with pytest.raises(MoleculeError):
        Molecule(id="", atoms=a2, bonds=())


def test_adjacency_and_degrees_match_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = int(rng.integers(2, 12))
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
        rng.shuffle(pairs)
        keep = pairs[: int(rng.integers(0, len(pairs) + 1))]
        m = Molecule(id="g", atoms=tuple(AtomFeature(6) for _ in range(n)),
                     bonds=tuple((u, v, "single") for u, v in keep))
        adj = adjacency(m)
        deg = degrees(m)
        for v in range(n):
            expect = sorted([b for a, b in keep if a == v] + [a for a, b in keep if b == v])
            assert adj[v] == expect
            assert deg[v] == len(expect)


# ---- JSONL ----

def test_jsonl_roundtrip_fixed_point(tmp_path):
    mols = [_ethanolamine(), _benzene()]
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    write_jsonl(p1, mols)
    back = list(parse_jsonl(p1))
    write_jsonl(p2, back)
    assert p1.read_bytes() == p2.read_bytes()
    assert [m.id for m in back] == ["etha", "benzene"]
    assert back[0] == mols[0]
    assert back[1].conformers == mols[1].conformers


def test_record_roundtrip_preserves_labels():
    m = _ethanolamine()
    rec = molecule_to_record(m)
    again = molecule_from_record(rec)
    assert again.labels == {"logp": -1.1, "tox": 0}
    assert again == m


def test_jsonl_error_carries_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = '{"id": "ok", "atoms": [{"z": 6}]}'
    path.write_text(good + "\n" + good + "\n{broken\n")
    with pytest.raises(MoleculeParseError) as err:
        list(parse_jsonl(path))
    assert ":3" in str(err.value)


def test_jsonl_semantic_error_carries_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "ok", "atoms": [{"z": 6}]}\n'
                    '{"id": "bad", "atoms": [{"z": 6}], "bonds": [[0, 5, "single"]]}\n')
    with pytest.raises(MoleculeParseError) as err:
        list(parse_jsonl(path))
    assert ":2" in str(err.value)


@pytest.mark.parametrize("rec,fragment", [
    ({"atoms": [{"z": 6}]}, "id"),
    ({"id": "x"}, "atoms"),
    ({"id": "x", "atoms": []}, "non-empty"),
    ({"id": "x", "atoms": [{"charge": 1}]}, "'z'"),
    ({"id": "x", "atoms": [{"z": 6.5}]}, "int"),
    ({"id": "x", "atoms": [{"z": 6}], "bonds": [[0, 1]]}, "bond 0"),
    ({"id": "x", "atoms": [{"z": 6}], "conformers": [[[0, 0], [0, 0]]]}, "N x 3"),
    ({"id": "x", "atoms": [{"z": 6}], "labels": {"y": "high"}}, "label"),
    ({"id": "x", "atoms": [{"z": 6}], "labels": {"y": float("inf")}}, "finite"),
])
def test_record_errors_name_the_problem(rec, fragment):
    with pytest.raises(MoleculeParseError) as err:
        molecule_from_record(rec)
    assert fragment in str(err.value)


def test_null_labels_mark_missing():
    rec = {"id": "x", "atoms": [{"z": 6}], "labels": {"y": None}}
    m = molecule_from_record(rec)
    assert m.labels == {"y": None}


# ---- SDF ----

def test_sdf_roundtrip_fixed_point(tmp_path):
    mols = [_ethanolamine(), _benzene()]
    p1 = tmp_path / "a.sdf"
    p2 = tmp_path / "b.sdf"
    write_sdf_v2000(p1, mols)
    back = list(parse_sdf_v2000(p1))
    write_sdf_v2000(p2, back)
    assert p1.read_bytes() == p2.read_bytes()

    assert [m.id for m in back] == ["etha", "benzene"]
    for orig, got in zip(mols, back):
        assert got.atoms == orig.atoms
        assert got.bonds == orig.bonds
        assert len(got.conformers) == len(orig.conformers)
        for c0, c1 in zip(orig.conformers, got.conformers):
            assert np.allclose(c0.coords, c1.coords, atol=5e-5)


def test_sdf_merges_only_identical_connectivity(tmp_path):
    # benzene has two conformers -> two records that must merge back into one
    path = tmp_path / "m.sdf"
    write_sdf_v2000(path, [_benzene(), _ethanolamine()])
    back = list(parse_sdf_v2000(path))
    assert len(back) == 2
    assert len(back[0].conformers) == 2
    assert len(back[1].conformers) == 1


def test_sdf_charge_block_roundtrip(tmp_path):
    m = _ethanolamine()
    path = tmp_path / "chg.sdf"
    write_sdf_v2000(path, [m])
    (got,) = parse_sdf_v2000(path)
    assert got.atoms[3].charge == 1
    assert got.atoms[0].charge == 0


def test_sdf_aromatic_flags_follow_aromatic_bonds(tmp_path):
    path = tmp_path / "ar.sdf"
    write_sdf_v2000(path, [_benzene()])
    (got,) = parse_sdf_v2000(path)
    assert all(a.aromatic for a in got.atoms)


def test_sdf_one_indexed_bond_error(tmp_path):
    path = tmp_path / "bad.sdf"
    text = ("m1\n\n\n"
            "  2  1  0  0  0  0  0  0  0  0999 V2000\n"
            "    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0\n"
            "    1.5000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0\n"
            "  0  2  1  0\n"
            "M  END\n$$$$\n")
    path.write_text(text)
    with pytest.raises(MoleculeParseError) as err:
        list(parse_sdf_v2000(path))
    assert "1-indexed" in str(err.value)


def test_sdf_unknown_symbol_and_truncation(tmp_path):
    path = tmp_path / "bad.sdf"
    path.write_text("m1\n\n\n"
                    "  1  0  0  0  0  0  0  0  0  0999 V2000\n"
                    "    0.0000    0.0000    0.0000 Qq  0  0\n"
                    "M  END\n$$$$\n")
    with pytest.raises(MoleculeParseError) as err:
        list(parse_sdf_v2000(path))
    assert "Qq" in str(err.value)

    path.write_text("m1\n\n\n  2  0  0  0  0999 V2000\n")
    with pytest.raises(MoleculeParseError):
        list(parse_sdf_v2000(path))


def test_sdf_id_field_overrides_title(tmp_path):
    path = tmp_path / "id.sdf"
    path.write_text("title-line\n\n\n"
                    "  1  0  0  0  0  0  0  0  0  0999 V2000\n"
                    "    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0\n"
                    "M  END\n"
                    "> <id>\nfrom-field\n\n"
                    "$$$$\n")
    (got,) = parse_sdf_v2000(path)
    assert got.id == "from-field"


def test_sdf_other_bond_code_roundtrip(tmp_path):
    m = Molecule(id="w", atoms=(AtomFeature(6), AtomFeature(6)),
                 bonds=((0, 1, "other"),),
                 conformers=(Conformer(np.array([[0.0, 0, 0], [1.5, 0, 0]])),))
    path = tmp_path / "o.sdf"
    write_sdf_v2000(path, [m])
    (got,) = parse_sdf_v2000(path)
    assert got.bonds == ((0, 1, "other"),)


def test_sdf_write_requires_conformer(tmp_path):
    m = Molecule(id="flat", atoms=(AtomFeature(6),), bonds=())
    with pytest.raises(MoleculeError):
        write_sdf_v2000(tmp_path / "x.sdf", [m])
