"""Show how a molecule is split into an ego-net view and its complement.

Run with ``python3 demos/ego_views.py``. Prints the k-hop balls around one
anchor atom, then samples the view pairs that pretraining would consume and
verifies the disjoint-cover property by eye.
"""

import numpy as np

from cfree.datagen import random_molecule
from cfree.molgraph import adjacency
from cfree.views import ViewConfig, k_ego_net, sample_views


def main() -> None:
    rng = np.random.default_rng(4)
    m = random_molecule(rng, "demo", 18, n_conformers=0)
    nbrs = adjacency(m)
    print(f"molecule {m.id}: {m.n_atoms} atoms, {len(m.bonds)} bonds")
    for v, lst in enumerate(nbrs):
        print(f"  atom {v:2d} (Z={m.atoms[v].z})  ->", lst)

    anchor = 0
    print()
    print(f"== k-hop balls around atom {anchor} ==")
    for k in range(1, 5):
        ball = sorted(int(v) for v in k_ego_net(m, anchor, k))
        print(f"  k={k}: {len(ball):2d} atoms  {ball}")

    print()
    print("== sampled view pairs ==")
    pairs, skipped = sample_views(m, ViewConfig(n_anchors=3, k_choices=(2, 3)),
                                  np.random.default_rng(7))
    for pair in pairs:
        ego = sorted(pair.ego.node_ids)
        comp = sorted(pair.complement.node_ids)
        overlap = set(ego) & set(comp)
        covered = len(ego) + len(comp) == m.n_atoms
        print(f"  anchor={pair.anchor} k={pair.k}")
        print(f"    ego        ({len(ego):2d}): {ego}")
        print(f"    complement ({len(comp):2d}): {comp}")
        print(f"    disjoint={not overlap} covers_all={covered}")
    print(f"pairs kept: {len(pairs)}, molecules skipped: {skipped}")


if __name__ == "__main__":
    main()
