"""Color refinement, hard-pair construction, and the separation experiment."""

import itertools

import numpy as np
import pytest

from cfree.encoders import EncoderConfig
from cfree.wlbench import (ColoredGraph, cycle_graph, dataset_hash,
                           gen_hard_pairs, has_k4, pairs_to_molecules,
                           parse_pairs_file, rook_graph_4x4, run_separation,
                           shrikhande_graph, wl_indistinguishable, wl_refine,
                           wl_refine_joint, write_accuracy_csv,
                           write_pairs_file)


def _cycle(n):
    return ColoredGraph.from_edges(n, cycle_graph(n))


def _path(n):
    return ColoredGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def _two_cycles(m):
    return ColoredGraph.from_edges(2 * m, cycle_graph(m) + cycle_graph(m, offset=m))


# ---- refinement semantics ----

def test_vertex_transitive_graphs_stay_monochrome():
    for g in (_cycle(5), _cycle(8), rook_graph_4x4(), shrikhande_graph()):
        hist = wl_refine(g)
        assert list(hist.values()) == [g.n]


def test_path_refinement_splits_by_distance_to_ends():
    hist4 = wl_refine(_path(4))
    assert sorted(hist4.values()) == [2, 2]       # ends vs middles
    hist5 = wl_refine(_path(5))
    assert sorted(hist5.values()) == [1, 2, 2]    # center, inner, ends


def test_initial_colors_are_respected():
    g = ColoredGraph.from_edges(4, cycle_graph(4), colors=[0, 1, 0, 1])
    hist = wl_refine(g)
    assert sorted(hist.values()) == [2, 2]
    # color values are a shared vocabulary: same values relabeled match,
    # different values are immediately distinguishable
    same = ColoredGraph.from_edges(4, cycle_graph(4), colors=[1, 0, 1, 0])
    assert wl_indistinguishable(g, same)
    other = ColoredGraph.from_edges(4, cycle_graph(4), colors=[7, 9, 7, 9])
    assert not wl_indistinguishable(g, other)


def test_histograms_are_permutation_invariant():
    rng = np.random.default_rng(0)
    for seed in range(10):
        n = int(rng.integers(4, 12))
        edges = [(u, v) for u in range(n) for v in range(u + 1, n)
                 if rng.random() < 0.35]
        g = ColoredGraph.from_edges(n, edges)
        perm = rng.permutation(n).tolist()
        assert wl_refine(g) == wl_refine(g.relabel(perm))
        assert wl_indistinguishable(g, g.relabel(perm))


def test_classic_indistinguishable_families():
    assert wl_indistinguishable(_cycle(6), _two_cycles(3))
    assert wl_indistinguishable(_cycle(8), _two_cycles(4))
    assert wl_indistinguishable(rook_graph_4x4(), shrikhande_graph())
    assert not wl_indistinguishable(_cycle(6), _path(6))       # degrees differ
    assert not wl_indistinguishable(_cycle(6), _cycle(5))      # sizes differ


def _isomorphic_bruteforce(g1: ColoredGraph, g2: ColoredGraph) -> bool:
    if g1.n != g2.n or len(g1.edges()) != len(g2.edges()):
        return False
    e2 = set(g2.edges())
    for perm in itertools.permutations(range(g1.n)):
        if all((min(perm[u], perm[v]), max(perm[u], perm[v])) in e2
               for u, v in g1.edges()):
            return True
    return False


def test_refinement_is_sound_vs_bruteforce_isomorphism():
    # distinguishable by 1-WL implies non-isomorphic (never the converse)
    rng = np.random.default_rng(1)
    checked_distinct = 0
    for _ in range(40):
        n = int(rng.integers(3, 7))
        def rand_graph():
            edges = [(u, v) for u in range(n) for v in range(u + 1, n)
                     if rng.random() < 0.5]
            return ColoredGraph.from_edges(n, edges)
        g1, g2 = rand_graph(), rand_graph()
        if not wl_indistinguishable(g1, g2):
            assert not _isomorphic_bruteforce(g1, g2)
            checked_distinct += 1
    assert checked_distinct >= 10


# ---- named graphs ----

def test_rook_and_shrikhande_are_srg_16_6_2_2():
    for g in (rook_graph_4x4(), shrikhande_graph()):
        assert g.n == 16
        assert len(g.edges()) == 48
        adj = [set(row) for row in g.adj]
        assert all(len(a) == 6 for a in adj)
        for u in range(16):
            for v in range(u + 1, 16):
                common = len(adj[u] & adj[v])
                assert common == 2, (u, v)  # lambda = mu = 2


def test_k4_detection_separates_the_srg_pair():
    assert has_k4(rook_graph_4x4())
    assert not has_k4(shrikhande_graph())
    k4 = ColoredGraph.from_edges(4, list(itertools.combinations(range(4), 2)))
    assert has_k4(k4)
    assert not has_k4(_cycle(4))


# ---- pair generation ----

def test_hard_pairs_are_certified_and_labeled():
    rng = np.random.default_rng(0)
    pairs = gen_hard_pairs(12, (6, 16), rng)
    assert len(pairs) == 12
    for p in pairs:
        assert not p.distinguishable_by_1wl
        assert wl_indistinguishable(p.g1, p.g2)
        assert (p.label1, p.label2) == (1, 0)
        assert p.g1.n == p.g2.n
        assert 6 <= p.g1.n <= 16


def test_size_range_restricts_families():
    only_c6 = gen_hard_pairs(5, (6, 6), np.random.default_rng(1))
    assert all(p.g1.n == 6 for p in only_c6)
    only_srg = gen_hard_pairs(3, (16, 16), np.random.default_rng(2))
    assert all(p.g1.n == 16 for p in only_srg)
    for p in only_srg:
        assert has_k4(p.g1) and not has_k4(p.g2)
    with pytest.raises(ValueError):
        gen_hard_pairs(2, (5, 16))
    with pytest.raises(ValueError):
        gen_hard_pairs(2, (11, 15))   # no family of size 11..15


def test_pairs_are_randomly_relabeled():
    pairs = gen_hard_pairs(4, (6, 6), np.random.default_rng(3))
    assert len({p.g1.adj for p in pairs}) > 1  # not always the identity layout


# ---- file format ----

def test_pairs_file_roundtrip(tmp_path):
    pairs = gen_hard_pairs(5, (6, 16), np.random.default_rng(4))
    path = tmp_path / "pairs.txt"
    write_pairs_file(path, pairs)
    back = parse_pairs_file(path)
    assert len(back) == len(pairs)
    for orig, got in zip(pairs, back):
        assert got.g1.edges() == orig.g1.edges()
        assert got.g2.edges() == orig.g2.edges()
        assert (got.label1, got.label2) == (1, 0)
        assert not got.distinguishable_by_1wl  # re-certified on load
    first = path.read_text().splitlines()[0].split()
    assert len(first) == 3  # "N M class"


def test_pairs_file_rejects_truncation(tmp_path):
    pairs = gen_hard_pairs(2, (6, 6), np.random.default_rng(5))
    path = tmp_path / "pairs.txt"
    write_pairs_file(path, pairs)
    tokens = path.read_text().split()
    (tmp_path / "trunc.txt").write_text(" ".join(tokens[:-1]))
    with pytest.raises(ValueError):
        parse_pairs_file(tmp_path / "trunc.txt")
    (tmp_path / "odd.txt").write_text("3 0 1\n")
    with pytest.raises(ValueError):
        parse_pairs_file(tmp_path / "odd.txt")


def test_dataset_hash_is_frozen_for_fixed_seed(tmp_path):
    pairs = gen_hard_pairs(6, (6, 16), np.random.default_rng(123))
    path = tmp_path / "pairs.txt"
    write_pairs_file(path, pairs)
    assert dataset_hash(path) == (
        "c0cd18822aa4f36e91463770c1f7ae8399675920f29ff325820dd4881b782caa")


# ---- separation experiment ----

def test_pairs_to_molecules_uniform_features():
    pairs = gen_hard_pairs(3, (6, 6), np.random.default_rng(6))
    mols = pairs_to_molecules(pairs)
    assert len(mols) == 6
    assert [m.labels["y"] for m in mols] == [1, 0, 1, 0, 1, 0]
    assert all(a.z == 6 and a.charge == 0 and not a.aromatic
               for m in mols for a in m.atoms)
    assert len({m.id for m in mols}) == 6


def _tiny_sep_cfg():
    return EncoderConfig(gine_layers=2, gine_hidden=8, fusion_layers=1,
                         fusion_heads=2, fusion_hidden=8, mode="2D-only")


def test_run_separation_shapes_and_csv(tmp_path):
    pairs = gen_hard_pairs(6, (6, 6), np.random.default_rng(7))
    res = run_separation(pairs, ks=(1,), seeds=(0,), epochs=2,
                         enc_cfg=_tiny_sep_cfg())
    assert [r["model"] for r in res.rows] == ["baseline", "ds-ego1"]
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in res.rows)
    assert [s["model"] for s in res.summary] == ["baseline", "ds-ego1"]
    assert all(s["n_seeds"] == 1 for s in res.summary)
    out = tmp_path / "accuracy.csv"
    write_accuracy_csv(out, res)
    lines = out.read_text().splitlines()
    assert lines[0] == "model,k,mean_accuracy,std_accuracy,n_seeds"
    assert len(lines) == 3


def test_run_separation_warns_when_ego_nets_cover_everything():
    pairs = gen_hard_pairs(4, (6, 6), np.random.default_rng(8))
    res = run_separation(pairs, ks=(6,), seeds=(0,), epochs=1,
                         enc_cfg=_tiny_sep_cfg())
    assert any("k=6" in w for w in res.coverage_warnings)
