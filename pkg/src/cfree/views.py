"""k-EgoNet / complement view extraction and the extraction benchmark.

A view pair splits a molecule's atoms into the BFS k-hop ball around an
anchor and everything else. Both sides are pure induced subgraphs:
bonds crossing the cut are dropped from both. Conformer coordinate
blocks are sliced per side, so each side is a full (2D + 3D) input.

k_ego_net deliberately rescans the molecule's full edge arrays once per
hop (frontier masks), making one extraction O(k * |E|); the benchmark
below measures exactly that scaling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .molgraph import AtomFeature, Molecule

__all__ = [
    "Subgraph", "ViewPair", "ViewConfig", "subgraph_from_molecule",
    "whole_molecule_subgraph", "k_ego_net", "make_view_pair", "sample_views",
    "bench_egonet", "write_bench_csv", "BENCH_CSV_HEADER",
]


@dataclass(frozen=True, eq=False)
class Subgraph:
    """Induced subgraph of a molecule, reindexed to 0..n-1."""

    parent_id: str
    node_ids: tuple[int, ...]                 # sorted original atom indices
    atoms: tuple[AtomFeature, ...]
    bonds: tuple[tuple[int, int, str], ...]   # endpoints in subgraph indexing
    conformers: tuple[np.ndarray, ...]        # per conformer (n, 3) slices

    @property
    def n_atoms(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True)
class ViewPair:
    ego: Subgraph
    complement: Subgraph
    anchor: int
    k: int
    ego_is_context: bool = True

    @property
    def parent_id(self) -> str:
        return self.ego.parent_id

    @property
    def context(self) -> Subgraph:
        return self.ego if self.ego_is_context else self.complement

    @property
    def target(self) -> Subgraph:
        return self.complement if self.ego_is_context else self.ego


@dataclass(frozen=True)
class ViewConfig:
    n_anchors: int = 2
    k_choices: tuple[int, ...] = (3, 4)

    def __post_init__(self):
        if self.n_anchors < 1:
            raise ValueError("n_anchors must be >= 1")
        if not self.k_choices or any(k < 1 for k in self.k_choices):
            raise ValueError("k_choices must be non-empty positive ints")


def subgraph_from_molecule(m: Molecule, node_ids) -> Subgraph:
    ids = tuple(sorted(int(i) for i in node_ids))
    if not ids:
        raise ValueError(f"{m.id}: empty subgraph")
    if ids[0] < 0 or ids[-1] >= m.n_atoms or len(set(ids)) != len(ids):
        raise ValueError(f"{m.id}: bad node ids {ids[:8]}...")
    remap = {orig: new for new, orig in enumerate(ids)}
    keep = set(ids)
    bonds = tuple((remap[u], remap[v], order) for u, v, order in m.bonds
                  if u in keep and v in keep)
    idx = np.asarray(ids, dtype=np.intp)
    conformers = tuple(np.ascontiguousarray(c.coords[idx]) for c in m.conformers)
    atoms = tuple(m.atoms[i] for i in ids)
    return Subgraph(parent_id=m.id, node_ids=ids, atoms=atoms, bonds=bonds,
                    conformers=conformers)


def whole_molecule_subgraph(m: Molecule) -> Subgraph:
    return subgraph_from_molecule(m, range(m.n_atoms))


def _edge_arrays(m: Molecule) -> tuple[np.ndarray, np.ndarray]:
    # both directions so a single scan covers undirected adjacency
    if not m.bonds:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    uv = np.asarray([(u, v) for u, v, _ in m.bonds], dtype=np.intp)
    src = np.concatenate([uv[:, 0], uv[:, 1]])
    dst = np.concatenate([uv[:, 1], uv[:, 0]])
    return src, dst


def k_ego_net(m: Molecule, anchor: int, k: int) -> np.ndarray:
    """Sorted atom indices within BFS distance k of the anchor.

    Each hop scans the full edge arrays with a frontier mask, so one call
    costs O(k * |E|) regardless of how small the ball is.
    """
    n = m.n_atoms
    if not 0 <= anchor < n:
        raise ValueError(f"{m.id}: anchor {anchor} out of range for {n} atoms")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    src, dst = _edge_arrays(m)
    in_ball = np.zeros(n, dtype=bool)
    in_ball[anchor] = True
    frontier = np.zeros(n, dtype=bool)
    frontier[anchor] = True
    for _ in range(k):
        if not frontier.any() or src.size == 0:
            break
        hit = dst[frontier[src]]
        nxt = np.zeros(n, dtype=bool)
        nxt[hit] = True
        nxt &= ~in_ball
        if not nxt.any():
            break
        in_ball |= nxt
        frontier = nxt
    return np.flatnonzero(in_ball)


def make_view_pair(m: Molecule, anchor: int, k: int,
                   ego_is_context: bool = True) -> ViewPair | None:
    """Build (ego, complement) induced views, or None if the complement is empty."""
    ego_ids = k_ego_net(m, anchor, k)
    if ego_ids.size == m.n_atoms:
        return None
    comp_ids = np.setdiff1d(np.arange(m.n_atoms), ego_ids, assume_unique=True)
    ego = subgraph_from_molecule(m, ego_ids)
    comp = subgraph_from_molecule(m, comp_ids)
    return ViewPair(ego=ego, complement=comp, anchor=anchor, k=k,
                    ego_is_context=ego_is_context)


def sample_views(m: Molecule, cfg: ViewConfig,
                 rng: np.random.Generator) -> tuple[list[ViewPair], int]:
    """Sample up to cfg.n_anchors view pairs; anchors drawn without replacement.

    Rejected (whole-graph ego) draws retry a fresh anchor up to 5 times,
    then shrink k stepwise to 1 on the last anchor. Returns (pairs,
    skipped) where skipped is 1 when the molecule yields no pair at all.
    """
    available = list(range(m.n_atoms))
    pairs: list[ViewPair] = []
    for _ in range(cfg.n_anchors):
        found = None
        last_anchor = None
        last_k = None
        for _attempt in range(5):
            if not available:
                break
            pick = int(rng.integers(len(available)))
            anchor = available.pop(pick)
            k = int(cfg.k_choices[rng.integers(len(cfg.k_choices))])
            last_anchor, last_k = anchor, k
            found = make_view_pair(m, anchor, k)
            if found is not None:
                break
        if found is None and last_anchor is not None:
            k = last_k - 1
            while k >= 1 and found is None:
                found = make_view_pair(m, last_anchor, k)
                k -= 1
        if found is not None:
            role = bool(rng.integers(2))  # fair coin per accepted pair
            pairs.append(replace(found, ego_is_context=role))
    skipped = 1 if not pairs else 0
    return pairs, skipped


# ---- extraction benchmark ----

BENCH_CSV_HEADER = ("size", "k", "mean_ms", "stddev_ms", "slope")


def _carbon(n: int) -> tuple[AtomFeature, ...]:
    return tuple(AtomFeature(z=6) for _ in range(n))


def bench_egonet(sizes, avg_degree: float, trials: int, k: int = 3,
                 seed: int = 0) -> list[tuple[int, int, float, float, float]]:
    """Time k_ego_net on random sparse graphs of the given sizes.

    Returns one row per size: (size, k, mean_ms, stddev_ms, slope) with
    the least-squares slope of mean time vs |V| repeated on every row.
    """
    from .datagen import random_sparse_graph

    sizes = [int(s) for s in sizes]
    if any(s < 2 for s in sizes) or trials < 1:
        raise ValueError("sizes must be >= 2 and trials >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE60]))
    means, stds = [], []
    for n in sizes:
        edges = random_sparse_graph(n, avg_degree, rng)
        mol = Molecule(id=f"bench{n}", atoms=_carbon(n),
                       bonds=tuple((u, v, "single") for u, v in edges))
        anchors = rng.integers(0, n, size=trials)
        k_ego_net(mol, int(anchors[0]), k)  # warm up caches
        timings = np.empty(trials, dtype=np.float64)
        for t in range(trials):
            t0 = time.perf_counter()
            k_ego_net(mol, int(anchors[t]), k)
            timings[t] = time.perf_counter() - t0
        means.append(float(timings.mean() * 1e3))
        stds.append(float(timings.std() * 1e3))
    slope = float(np.polyfit(np.asarray(sizes, dtype=np.float64),
                             np.asarray(means), 1)[0]) if len(sizes) > 1 else 0.0
    return [(n, k, means[i], stds[i], slope) for i, n in enumerate(sizes)]


def write_bench_csv(path, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_CSV_HEADER)
        for size, k, mean_ms, std_ms, slope in rows:
            writer.writerow([size, k, repr(float(mean_ms)), repr(float(std_ms)),
                             repr(float(slope))])
