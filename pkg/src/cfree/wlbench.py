"""1-WL color refinement and the ego-net expressiveness experiment.

wl_refine iteratively rehashes (color, sorted neighbor colors) with
canonical interning: each round's signatures are sorted and assigned
dense ids in sorted order, so histograms are comparable across graphs
refined with the same initial color convention. Cross-graph verdicts
use joint refinement of both graphs.

gen_hard_pairs builds 1-WL-indistinguishable pairs with different
ground truth: C_2m vs two disjoint C_m (labeled by connectivity, m in
{3,4,5} so induced ego-nets can still tell them apart), and the 4x4
rook graph vs the Shrikhande graph (both SRG(16,6,2,2); labeled by
4-clique presence). Every emitted pair is certified indistinguishable
by wl_refine itself.

run_separation trains a 1-WL-bounded whole-graph classifier and
DeepSets-over-k-EgoNets models on those pairs and reports mean/std test
accuracy over seeds.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import ParamStore
from .encoders import EncoderConfig, encode_subgraph, init_encoder_params
from .heads import _ds_combine, init_ds_head, init_linear_head
from .molgraph import AtomFeature, Molecule
from .objective import AdamState, adam_step, derive_rng
from .tensor import Tensor
from .views import k_ego_net, subgraph_from_molecule, whole_molecule_subgraph

__all__ = [
    "ColoredGraph", "PairInstance", "wl_refine", "wl_refine_joint",
    "wl_indistinguishable", "gen_hard_pairs", "pairs_to_molecules",
    "write_pairs_file", "parse_pairs_file", "dataset_hash", "run_separation",
    "SeparationResult", "write_accuracy_csv", "ACCURACY_CSV_HEADER",
    "rook_graph_4x4", "shrikhande_graph", "cycle_graph", "has_k4",
]


@dataclass(frozen=True)
class ColoredGraph:
    n: int
    adj: tuple[tuple[int, ...], ...]   # sorted neighbor tuples
    colors: tuple[int, ...]            # initial colors, dense from 0

    def __post_init__(self):
        if self.n < 1 or len(self.adj) != self.n or len(self.colors) != self.n:
            raise ValueError("inconsistent graph arrays")

    @classmethod
    def from_edges(cls, n: int, edges, colors=None) -> "ColoredGraph":
        adj: list[list[int]] = [[] for _ in range(n)]
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n) or u == v:
                raise ValueError(f"bad edge ({u}, {v}) for n={n}")
            adj[u].append(v)
            adj[v].append(u)
        if colors is None:
            colors = [0] * n
        return cls(n=n, adj=tuple(tuple(sorted(row)) for row in adj),
                   colors=tuple(int(c) for c in colors))

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n) for v in self.adj[u] if u < v]

    def relabel(self, perm) -> "ColoredGraph":
        """Apply a permutation: node i moves to perm[i]."""
        perm = [int(p) for p in perm]
        n = self.n
        adj: list[list[int]] = [[] for _ in range(n)]
        colors = [0] * n
        for u in range(n):
            colors[perm[u]] = self.colors[u]
            adj[perm[u]] = sorted(perm[v] for v in self.adj[u])
        return ColoredGraph(n=n, adj=tuple(tuple(r) for r in adj), colors=tuple(colors))


def _refine_once(graphs: list[ColoredGraph],
                 colorings: list[list[int]]) -> tuple[list[list[int]], int]:
    sigs = []
    for g, colors in zip(graphs, colorings):
        sigs.append([(colors[v], tuple(sorted(colors[u] for u in g.adj[v])))
                     for v in range(g.n)])
    # canonical interning: dense ids assigned in sorted signature order
    table = {sig: i for i, sig in enumerate(sorted({s for gs in sigs for s in gs}))}
    new = [[table[s] for s in gs] for gs in sigs]
    return new, len(table)


def wl_refine_joint(graphs: list[ColoredGraph],
                    max_rounds: int | None = None) -> list[dict[int, int]]:
    """Refine several graphs against a shared color table; returns histograms."""
    if not graphs:
        return []
    colorings = [list(g.colors) for g in graphs]
    # joint re-interning of the initial colors keeps ids dense and shared
    init = sorted({c for cs in colorings for c in cs})
    remap = {c: i for i, c in enumerate(init)}
    colorings = [[remap[c] for c in cs] for cs in colorings]
    n_colors = len(init)
    rounds = max_rounds if max_rounds is not None else sum(g.n for g in graphs)
    for _ in range(rounds):
        colorings, n_new = _refine_once(graphs, colorings)
        if n_new == n_colors:  # partition stable: refinement only ever splits
            break
        n_colors = n_new
    out = []
    for cs in colorings:
        hist: dict[int, int] = {}
        for c in cs:
            hist[c] = hist.get(c, 0) + 1
        out.append(hist)
    return out


def wl_refine(g: ColoredGraph, max_rounds: int | None = None) -> dict[int, int]:
    """Stable 1-WL color histogram of one graph."""
    return wl_refine_joint([g], max_rounds)[0]


def wl_indistinguishable(g1: ColoredGraph, g2: ColoredGraph) -> bool:
    h1, h2 = wl_refine_joint([g1, g2])
    return h1 == h2


# ---- hard pair construction ----

def cycle_graph(n: int, offset: int = 0) -> list[tuple[int, int]]:
    return [(offset + i, offset + (i + 1) % n) for i in range(n)]


def rook_graph_4x4() -> ColoredGraph:
    """4x4 rook's graph: cells adjacent iff same row or same column."""
    idx = lambda r, c: 4 * r + c
    edges = []
    for r in range(4):
        for c1, c2 in itertools.combinations(range(4), 2):
            edges.append((idx(r, c1), idx(r, c2)))
            edges.append((idx(c1, r), idx(c2, r)))
    return ColoredGraph.from_edges(16, edges)


def shrikhande_graph() -> ColoredGraph:
    """Cayley graph of Z4 x Z4 with connection set {+-(1,0), +-(0,1), +-(1,1)}."""
    steps = [(1, 0), (3, 0), (0, 1), (0, 3), (1, 1), (3, 3)]
    edges = set()
    for x in range(4):
        for y in range(4):
            u = 4 * x + y
            for dx, dy in steps:
                v = 4 * ((x + dx) % 4) + (y + dy) % 4
                edges.add((min(u, v), max(u, v)))
    return ColoredGraph.from_edges(16, sorted(edges))


def has_k4(g: ColoredGraph) -> bool:
    adj = [set(row) for row in g.adj]
    for u in range(g.n):
        nbrs = [v for v in adj[u] if v > u]
        for a, b, c in itertools.combinations(nbrs, 3):
            if b in adj[a] and c in adj[a] and c in adj[b]:
                return True
    return False


def _is_connected(g: ColoredGraph) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in g.adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == g.n


@dataclass(frozen=True)
class PairInstance:
    g1: ColoredGraph
    g2: ColoredGraph
    distinguishable_by_1wl: bool
    label1: int
    label2: int


# cycle family sizes where induced k<=3 ego-net multisets still differ;
# for m >= 6 both members decompose into identical path ego-nets
_CYCLE_MS = (3, 4, 5)

# The strongly regular family has a single member pair (up to relabeling),
# and its diameter-2 graphs defeat subgraph models as well: every 2-hop
# ego-net is already the whole graph. Salt it in sparsely instead of
# drawing it as often as each cycle size, so benches over mixed pair sets
# stay dominated by pairs that subgraph views can actually separate.
_SRG_RATE = 1 / 16


def gen_hard_pairs(n_pairs: int, size_range: tuple[int, int] = (6, 16),
                   rng: np.random.Generator | None = None,
                   max_tries: int = 16) -> list[PairInstance]:
    """Deterministically sample certified 1-WL-hard pairs."""
    if rng is None:
        rng = np.random.default_rng(0)
    lo, hi = size_range
    if lo < 6:
        raise ValueError("sizes must be >= 6")
    menu: list[tuple[str, int]] = [("cycle", m) for m in _CYCLE_MS if lo <= 2 * m <= hi]
    srg_fits = lo <= 16 <= hi
    if not menu and not srg_fits:
        raise ValueError(f"no hard family fits size range {size_range}")
    pairs: list[PairInstance] = []
    for i in range(n_pairs):
        for _ in range(max_tries):
            if srg_fits and (not menu or rng.random() < _SRG_RATE):
                family, m = "srg", 16
            else:
                family, m = menu[int(rng.integers(len(menu)))]
            if family == "cycle":
                n = 2 * m
                g1 = ColoredGraph.from_edges(n, cycle_graph(n))          # connected
                g2 = ColoredGraph.from_edges(n, cycle_graph(m) + cycle_graph(m, offset=m))
                label1, label2 = 1, 0                                    # connectivity
            else:
                g1 = rook_graph_4x4()                                    # has K4
                g2 = shrikhande_graph()                                  # K4-free
                label1, label2 = 1, 0
            g1 = g1.relabel(rng.permutation(g1.n))
            g2 = g2.relabel(rng.permutation(g2.n))
            if wl_indistinguishable(g1, g2):
                pairs.append(PairInstance(g1=g1, g2=g2, distinguishable_by_1wl=False,
                                          label1=label1, label2=label2))
                break
        else:
            raise RuntimeError(f"could not certify a hard pair after {max_tries} tries")
    return pairs


# ---- file format: "N M class" header then M lines "u v", pairs concatenated ----

def write_pairs_file(path, pairs: list[PairInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            for g, label in ((pair.g1, pair.label1), (pair.g2, pair.label2)):
                edges = g.edges()
                fh.write(f"{g.n} {len(edges)} {label}\n")
                for u, v in edges:
                    fh.write(f"{u} {v}\n")


def parse_pairs_file(path) -> list[PairInstance]:
    """Read concatenated graph pairs; 1-WL status is re-certified on load."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    graphs: list[tuple[ColoredGraph, int]] = []
    pos = 0
    while pos < len(tokens):
        if pos + 3 > len(tokens):
            raise ValueError(f"{path}: truncated graph header at token {pos}")
        n, m, label = (int(tokens[pos]), int(tokens[pos + 1]), int(tokens[pos + 2]))
        pos += 3
        if pos + 2 * m > len(tokens):
            raise ValueError(f"{path}: truncated edge list (expected {m} edges)")
        edges = [(int(tokens[pos + 2 * j]), int(tokens[pos + 2 * j + 1]))
                 for j in range(m)]
        pos += 2 * m
        graphs.append((ColoredGraph.from_edges(n, edges), label))
    if len(graphs) % 2 != 0:
        raise ValueError(f"{path}: odd number of graphs; pairs expected")
    pairs = []
    for i in range(0, len(graphs), 2):
        (g1, l1), (g2, l2) = graphs[i], graphs[i + 1]
        pairs.append(PairInstance(g1=g1, g2=g2,
                                  distinguishable_by_1wl=not wl_indistinguishable(g1, g2),
                                  label1=l1, label2=l2))
    return pairs


def dataset_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


# ---- separation experiment ----

def pairs_to_molecules(pairs: list[PairInstance]) -> list[Molecule]:
    """Feature-uniform carbon skeletons; label 'y' is the pair class."""
    mols = []
    for i, pair in enumerate(pairs):
        for tag, g, label in (("a", pair.g1, pair.label1), ("b", pair.g2, pair.label2)):
            mols.append(Molecule(
                id=f"pair{i:04d}{tag}",
                atoms=tuple(AtomFeature(z=6) for _ in range(g.n)),
                bonds=tuple((u, v, "single") for u, v in g.edges()),
                labels={"y": label}))
    return mols


@dataclass
class SeparationResult:
    rows: list[dict]                      # per (model, seed) accuracy
    summary: list[dict]                   # per model mean/std over seeds
    coverage_warnings: list[str] = field(default_factory=list)


ACCURACY_CSV_HEADER = ("model", "k", "mean_accuracy", "std_accuracy", "n_seeds")


def _bench_encoder_cfg() -> EncoderConfig:
    return EncoderConfig(gine_layers=3, gine_hidden=32, fusion_layers=2,
                         fusion_heads=2, fusion_hidden=32, mode="2D-only")


def _train_classifier(labels, idx_train, idx_val, idx_test, forward,
                      params: dict[str, ParamStore], seed: int, epochs: int,
                      lr: float = 1e-3, batch_size: int = 16) -> float:
    """Generic supervised loop; returns test accuracy at the best-val epoch."""
    rng = derive_rng(seed, "sep-order")
    opt = AdamState()
    y = np.asarray(labels, dtype=np.float64)

    def eval_acc(indices) -> float:
        correct = 0
        for i in indices:
            logit = forward(i).item()
            correct += int((logit > 0) == (y[i] > 0.5))
        return correct / len(indices)

    best_val = -1.0
    best_snapshot = {name: store.copy() for name, store in params.items()}
    for epoch in range(epochs):
        perm = rng.permutation(len(idx_train))
        for lo in range(0, len(idx_train), batch_size):
            chunk = [idx_train[j] for j in perm[lo:lo + batch_size]]
            loss = None
            for i in chunk:
                logit = forward(i)
                # bce(x, y) = softplus(x) - x * y
                term = T.sub(T.softplus(logit), T.mul(logit, float(y[i])))
                loss = term if loss is None else T.add(loss, term)
            loss = T.mul(loss, 1.0 / len(chunk))
            loss.backward()
            adam_step(params, lr, 0.0, opt)
        val_acc = eval_acc(idx_val)
        if val_acc > best_val:
            best_val = val_acc
            best_snapshot = {name: store.copy() for name, store in params.items()}
    for name, store in params.items():
        for pname in store.names():
            store[pname].data[...] = best_snapshot[name][pname].data
    return eval_acc(idx_test)


def run_separation(pairs: list[PairInstance], ks=(1, 2, 3), seeds=(0, 1, 2),
                   epochs: int = 25, enc_cfg: EncoderConfig | None = None,
                   anchor_cap: int = 16, log_fn=None) -> SeparationResult:
    """Baseline vs DeepSets-over-k-EgoNets on 1-WL-hard pairs.

    Models train supervised on the pair classes; splits are by pair so both
    members land on the same side. Accuracy is reported per seed and
    aggregated mean/std per model.
    """
    if enc_cfg is None:
        enc_cfg = _bench_encoder_cfg()
    mols = pairs_to_molecules(pairs)
    labels = [m.labels["y"] for m in mols]
    whole = [whole_molecule_subgraph(m) for m in mols]
    sub_cache: dict[int, list] = {}
    coverage_warnings = []
    for k in ks:
        subs_per_mol = []
        saturated = True
        for m in mols:
            n = m.n_atoms
            anchors = (range(n) if n <= anchor_cap
                       else sorted(derive_rng(0, "sep-anchors", m.id)
                                   .choice(n, size=anchor_cap, replace=False)))
            subs = []
            for a in anchors:
                ids = k_ego_net(m, int(a), k)
                # saturated: one more hop adds nothing, the ego-net is the
                # anchor's whole component and larger k is meaningless
                saturated &= ids.size == k_ego_net(m, int(a), k + 1).size
                subs.append(subgraph_from_molecule(m, ids))
            subs_per_mol.append(subs)
        sub_cache[k] = subs_per_mol
        if saturated:
            coverage_warnings.append(
                f"k={k}: every ego-net already spans its connected component; "
                f"views are degenerate")
    n_pairs = len(pairs)
    rows = []
    for seed in seeds:
        pair_perm = derive_rng(seed, "sep-split").permutation(n_pairs)
        n_test = max(1, int(round(0.15 * n_pairs)))
        n_val = max(1, int(round(0.15 * n_pairs)))
        test_pairs = pair_perm[:n_test]
        val_pairs = pair_perm[n_test:n_test + n_val]
        train_pairs = pair_perm[n_test + n_val:]
        expand = lambda ps: [2 * int(p) + o for p in ps for o in (0, 1)]
        idx_train, idx_val, idx_test = (expand(train_pairs), expand(val_pairs),
                                        expand(test_pairs))

        # 1-WL-bounded baseline: whole graph through the encoder, linear on CLS
        enc = init_encoder_params(enc_cfg, derive_rng(seed, "sep-enc-base"))
        head = init_linear_head(enc_cfg.fusion_hidden, 1, derive_rng(seed, "sep-head-base"))

        def fwd_base(i, enc=enc, head=head):
            cls, _ = encode_subgraph(whole[i], enc, enc_cfg)
            out = T.linear(T.reshape(cls, (1, -1)), head["lin.w"], head["lin.b"])
            return T.reshape(out, ())

        acc = _train_classifier(labels, idx_train, idx_val, idx_test,
                                fwd_base, {"enc": enc, "head": head}, seed, epochs)
        rows.append({"model": "baseline", "k": 0, "seed": int(seed), "accuracy": acc})
        if log_fn is not None:
            log_fn(f"seed {seed} baseline: {acc:.3f}")

        for k in ks:
            enc_k = init_encoder_params(enc_cfg, derive_rng(seed, "sep-enc", k))
            head_k = init_ds_head(enc_cfg.fusion_hidden, 1, derive_rng(seed, "sep-head", k))
            subs_per_mol = sub_cache[k]

            def fwd_ds(i, enc_k=enc_k, head_k=head_k, subs_per_mol=subs_per_mol):
                cls_list = [encode_subgraph(s, enc_k, enc_cfg)[0]
                            for s in subs_per_mol[i]]
                return T.reshape(_ds_combine(cls_list, head_k), ())

            acc = _train_classifier(labels, idx_train, idx_val, idx_test,
                                    fwd_ds, {"enc": enc_k, "head": head_k}, seed, epochs)
            rows.append({"model": f"ds-ego{k}", "k": k, "seed": int(seed),
                         "accuracy": acc})
            if log_fn is not None:
                log_fn(f"seed {seed} ds-ego{k}: {acc:.3f}")

    summary = []
    for model in ["baseline"] + [f"ds-ego{k}" for k in ks]:
        accs = [r["accuracy"] for r in rows if r["model"] == model]
        kk = next(r["k"] for r in rows if r["model"] == model)
        summary.append({"model": model, "k": kk,
                        "mean_accuracy": float(np.mean(accs)),
                        "std_accuracy": float(np.std(accs)),
                        "n_seeds": len(accs)})
    return SeparationResult(rows=rows, summary=summary,
                            coverage_warnings=coverage_warnings)


def write_accuracy_csv(path, result: SeparationResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ACCURACY_CSV_HEADER)
        for row in result.summary:
            writer.writerow([row["model"], row["k"], repr(row["mean_accuracy"]),
                             repr(row["std_accuracy"]), row["n_seeds"]])
