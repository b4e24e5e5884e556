"""Synthetic molecules and random sparse graphs for tests, demos, benches.

Random "molecules" are connected sparse graphs (spanning tree plus a few
extra edges, average degree ~2.1) decorated with light-element atoms and
Gaussian conformers. They exercise every code path without any
chemistry toolkit.
"""

from __future__ import annotations

import numpy as np

from .molgraph import AtomFeature, Conformer, Molecule

__all__ = ["random_sparse_graph", "random_molecule", "random_molecules"]


def random_sparse_graph(n: int, avg_degree: float, rng: np.random.Generator,
                        connected: bool = False) -> list[tuple[int, int]]:
    """Distinct undirected edges with |E| ~= avg_degree * n / 2."""
    if n < 1:
        raise ValueError("n must be >= 1")
    max_edges = n * (n - 1) // 2
    target = min(int(round(avg_degree * n / 2.0)), max_edges)
    edges: set[tuple[int, int]] = set()
    if connected and n > 1:
        for v in range(1, n):
            u = int(rng.integers(v))
            edges.add((u, v))
    while len(edges) < target:
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if u == v:
            continue
        edges.add((min(u, v), max(u, v)))
    return sorted(edges)


_BOND_CHOICES = ("single", "single", "single", "double", "aromatic")


def random_molecule(rng: np.random.Generator, mol_id: str, n_atoms: int,
                    avg_degree: float = 2.1, n_conformers: int = 3,
                    z_choices=(6, 6, 6, 7, 8), label_fn=None,
                    coord_scale: float = 2.0) -> Molecule:
    edges = random_sparse_graph(n_atoms, avg_degree, rng, connected=True)
    atoms = tuple(
        AtomFeature(z=int(z_choices[rng.integers(len(z_choices))]),
                    charge=int(rng.integers(-1, 2)) if rng.random() < 0.05 else 0)
        for _ in range(n_atoms))
    bonds = tuple((u, v, _BOND_CHOICES[rng.integers(len(_BOND_CHOICES))])
                  for u, v in edges)
    conformers = tuple(Conformer(rng.normal(scale=coord_scale, size=(n_atoms, 3)))
                       for _ in range(n_conformers))
    mol = Molecule(id=mol_id, atoms=atoms, bonds=bonds, conformers=conformers)
    if label_fn is not None:
        labels = label_fn(mol, rng)
        mol = Molecule(id=mol.id, atoms=mol.atoms, bonds=mol.bonds,
                       conformers=mol.conformers, labels=labels)
    return mol


def random_molecules(rng: np.random.Generator, count: int, n_atoms_range=(10, 20),
                     prefix: str = "synth", **kwargs) -> list[Molecule]:
    lo, hi = n_atoms_range
    return [random_molecule(rng, f"{prefix}{i:04d}",
                            int(rng.integers(lo, hi + 1)), **kwargs)
            for i in range(count)]
