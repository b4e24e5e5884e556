"""Molecular encoders: GINE (2D), continuous-filter conv (3D), fusion.

The 2D branch embeds atoms as a sum of atomic-number, degree-bucket,
formal-charge, and aromatic-flag embeddings, runs GINE message passing
with a shared bond-order table, and reads each node out as the mean of
all intermediate representations (input embedding included).

The 3D branch embeds atomic numbers only and applies continuous-filter
convolutions: for every ordered pair within the cutoff, a filter net
over a Gaussian RBF expansion of the distance (times a cosine cutoff
envelope) gates a dense transform of the source embedding. Distances
are geometry, not parameters, so they stay out of the autodiff tape.

Assembly projects both token families to the fusion width, adds learned
modality embeddings to node tokens, and lays out
[CLS, SEP, 2D nodes, SEP, 3D nodes per conformer, SEP]. Fusion is a
pre-norm transformer with GELU feed-forward and no positional
encodings, so the CLS output is invariant to atom relabeling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .checkpoint import ParamStore
from .tensor import Tensor
from .views import Subgraph

__all__ = [
    "MODES", "KIND_CLS", "KIND_SEP", "KIND_NODE2D", "KIND_NODE3D",
    "ConfigError", "EncoderConfig", "TokenSequence", "init_encoder_params",
    "encode_2d", "encode_3d", "assemble", "fuse", "encode_subgraph",
    "expected_length", "atom_feature_indices",
]

MODES = ("2D-only", "3D-only", "MM")

KIND_CLS, KIND_SEP, KIND_NODE2D, KIND_NODE3D = 0, 1, 2, 3

_N_Z = 119        # atomic numbers 1..118; row 0 unused
_N_DEGREE = 5     # buckets 0,1,2,3,4+
_N_CHARGE = 5     # charges -2..+2, clamped
_N_AROMATIC = 2
_N_BOND = 5


class ConfigError(ValueError):
    """Raised for invalid encoder/predictor/schedule configuration."""


@dataclass(frozen=True)
class EncoderConfig:
    gine_layers: int = 3
    gine_hidden: int = 64
    schnet_hidden: int = 64
    schnet_interactions: int = 3
    schnet_cutoff: float = 10.0
    rbf_count: int = 50
    fusion_layers: int = 3
    fusion_heads: int = 4
    fusion_hidden: int = 128
    mode: str = "MM"

    def __post_init__(self):
        ints = ("gine_layers", "gine_hidden", "schnet_hidden", "schnet_interactions",
                "rbf_count", "fusion_layers", "fusion_heads", "fusion_hidden")
        for name in ints:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.schnet_cutoff <= 0:
            raise ConfigError(f"schnet_cutoff must be positive, got {self.schnet_cutoff}")
        if self.fusion_hidden % self.fusion_heads != 0:
            raise ConfigError(
                f"fusion_hidden {self.fusion_hidden} not divisible by "
                f"fusion_heads {self.fusion_heads}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def paper_scale(cls, mode: str = "MM") -> "EncoderConfig":
        """Full-size configuration; desk defaults are the constructor's."""
        return cls(gine_layers=6, gine_hidden=128, schnet_hidden=128,
                   schnet_interactions=6, schnet_cutoff=10.0, rbf_count=50,
                   fusion_layers=6, fusion_heads=8, fusion_hidden=512, mode=mode)

    def with_mode(self, mode: str) -> "EncoderConfig":
        return replace(self, mode=mode)


@dataclass(frozen=True, eq=False)
class TokenSequence:
    tokens: Tensor                         # (L, fusion_hidden)
    kinds: np.ndarray                      # (L,) int token kinds
    provenance: tuple                      # (atom_idx | None, conf_idx | None) per token

    def __post_init__(self):
        L = self.tokens.shape[0]
        if self.kinds.shape != (L,) or len(self.provenance) != L:
            raise ValueError("token annotations do not match sequence length")
        if L == 0 or self.kinds[0] != KIND_CLS or (self.kinds == KIND_CLS).sum() != 1:
            raise ValueError("sequence must have exactly one CLS token at position 0")

    def __len__(self) -> int:
        return self.tokens.shape[0]


def expected_length(n_atoms: int, n_conformers: int, mode: str) -> int:
    if mode == "MM":
        return 1 + 3 + n_atoms + n_conformers * n_atoms
    if mode == "2D-only":
        return n_atoms + 3
    if mode == "3D-only":
        return n_conformers * n_atoms + 3
    raise ConfigError(f"unknown mode {mode!r}")


# ---- parameter initialization ----

def _glorot(rng, fan_in: int, fan_out: int) -> Tensor:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return T.randn(rng, (fan_in, fan_out), std=std, requires_grad=True)


def _embed(rng, rows: int, width: int) -> Tensor:
    return T.randn(rng, (rows, width), std=0.02, requires_grad=True)


def _bias(width: int) -> Tensor:
    return T.zeros((width,), requires_grad=True)


def _add_layer_norm(store: ParamStore, prefix: str, width: int) -> None:
    store[f"{prefix}.g"] = T.ones((width,), requires_grad=True)
    store[f"{prefix}.b"] = _bias(width)


def _add_attention_block(store: ParamStore, prefix: str, width: int,
                         rng: np.random.Generator) -> None:
    _add_layer_norm(store, f"{prefix}.ln1", width)
    for mat in ("wq", "wk", "wv", "wo"):
        store[f"{prefix}.{mat}"] = _glorot(rng, width, width)
    for vec in ("bq", "bk", "bv", "bo"):
        store[f"{prefix}.{vec}"] = _bias(width)
    _add_layer_norm(store, f"{prefix}.ln2", width)
    store[f"{prefix}.ffn.w1"] = _glorot(rng, width, 2 * width)
    store[f"{prefix}.ffn.b1"] = _bias(2 * width)
    store[f"{prefix}.ffn.w2"] = _glorot(rng, 2 * width, width)
    store[f"{prefix}.ffn.b2"] = _bias(width)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> ParamStore:
    """Fresh backbone parameters; only the branches the mode needs."""
    store = ParamStore()
    d = cfg.fusion_hidden
    if cfg.mode in ("2D-only", "MM"):
        h = cfg.gine_hidden
        store["embed2d.z"] = _embed(rng, _N_Z, h)
        store["embed2d.degree"] = _embed(rng, _N_DEGREE, h)
        store["embed2d.charge"] = _embed(rng, _N_CHARGE, h)
        store["embed2d.aromatic"] = _embed(rng, _N_AROMATIC, h)
        store["embed2d.bond"] = _embed(rng, _N_BOND, h)
        for i in range(cfg.gine_layers):
            store[f"gine{i}.eps"] = T.zeros((), requires_grad=True)
            store[f"gine{i}.w1"] = _glorot(rng, h, h)
            store[f"gine{i}.b1"] = _bias(h)
            store[f"gine{i}.w2"] = _glorot(rng, h, h)
            store[f"gine{i}.b2"] = _bias(h)
        store["proj2d.w"] = _glorot(rng, h, d)
        store["proj2d.b"] = _bias(d)
        store["tok.mod2d"] = T.randn(rng, (d,), std=0.02, requires_grad=True)
    if cfg.mode in ("3D-only", "MM"):
        h = cfg.schnet_hidden
        store["embed3d.z"] = _embed(rng, _N_Z, h)
        for i in range(cfg.schnet_interactions):
            store[f"schnet{i}.filter.w1"] = _glorot(rng, cfg.rbf_count, h)
            store[f"schnet{i}.filter.b1"] = _bias(h)
            store[f"schnet{i}.filter.w2"] = _glorot(rng, h, h)
            store[f"schnet{i}.filter.b2"] = _bias(h)
            store[f"schnet{i}.in.w"] = _glorot(rng, h, h)
            store[f"schnet{i}.in.b"] = _bias(h)
        store["proj3d.w"] = _glorot(rng, h, d)
        store["proj3d.b"] = _bias(d)
        store["tok.mod3d"] = T.randn(rng, (d,), std=0.02, requires_grad=True)
    store["tok.cls"] = T.randn(rng, (d,), std=0.02, requires_grad=True)
    store["tok.sep"] = T.randn(rng, (d,), std=0.02, requires_grad=True)  # shared by all SEPs
    for i in range(cfg.fusion_layers):
        _add_attention_block(store, f"fuse{i}", d, rng)
    _add_layer_norm(store, "fuse.lnf", d)
    return store


# ---- 2D branch ----

def atom_feature_indices(sub: Subgraph) -> dict[str, np.ndarray]:
    """Categorical feature indices; degree comes from the subgraph itself."""
    n = sub.n_atoms
    deg = np.zeros(n, dtype=np.intp)
    for u, v, _ in sub.bonds:
        deg[u] += 1
        deg[v] += 1
    return {
        "z": np.asarray([a.z for a in sub.atoms], dtype=np.intp),
        "degree": np.minimum(deg, _N_DEGREE - 1),
        "charge": np.clip(np.asarray([a.charge for a in sub.atoms]) + 2,
                          0, _N_CHARGE - 1).astype(np.intp),
        "aromatic": np.asarray([int(a.aromatic) for a in sub.atoms], dtype=np.intp),
    }


_BOND_INDEX = {"single": 0, "double": 1, "triple": 2, "aromatic": 3, "other": 4}


def _initial_2d_embedding(sub: Subgraph, params: ParamStore) -> Tensor:
    feats = atom_feature_indices(sub)
    h = T.take(params["embed2d.z"], feats["z"])
    h = T.add(h, T.take(params["embed2d.degree"], feats["degree"]))
    h = T.add(h, T.take(params["embed2d.charge"], feats["charge"]))
    h = T.add(h, T.take(params["embed2d.aromatic"], feats["aromatic"]))
    return h


def encode_2d(sub: Subgraph, params: ParamStore, cfg: EncoderConfig) -> Tensor:
    """GINE node embeddings, (n_atoms, gine_hidden)."""
    n = sub.n_atoms
    h = _initial_2d_embedding(sub, params)
    reps = [h]
    if sub.bonds:
        uv = np.asarray([(u, v) for u, v, _ in sub.bonds], dtype=np.intp)
        src = np.concatenate([uv[:, 0], uv[:, 1]])
        dst = np.concatenate([uv[:, 1], uv[:, 0]])
        order = np.asarray([_BOND_INDEX[o] for _, _, o in sub.bonds], dtype=np.intp)
        order = np.concatenate([order, order])
    else:
        src = dst = order = np.empty(0, dtype=np.intp)
    for i in range(cfg.gine_layers):
        if src.size:
            msgs = T.relu(T.add(T.take(h, src), T.take(params["embed2d.bond"], order)))
            agg = T.segment_sum(msgs, dst, n)
        else:
            agg = T.zeros((n, cfg.gine_hidden))
        pre = T.add(T.mul(T.add(params[f"gine{i}.eps"], 1.0), h), agg)
        hid = T.relu(T.linear(pre, params[f"gine{i}.w1"], params[f"gine{i}.b1"]))
        h = T.linear(hid, params[f"gine{i}.w2"], params[f"gine{i}.b2"])
        reps.append(h)
    # node readout: mean over all intermediate representations
    stacked = reps[0]
    for r in reps[1:]:
        stacked = T.add(stacked, r)
    return T.mul(stacked, 1.0 / len(reps))


# ---- 3D branch ----

def _rbf_expand(d: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    centers = np.linspace(0.0, cfg.schnet_cutoff, cfg.rbf_count)
    width = centers[1] - centers[0] if cfg.rbf_count > 1 else cfg.schnet_cutoff
    return np.exp(-0.5 * ((d[:, None] - centers[None, :]) / width) ** 2)


def _cosine_envelope(d: np.ndarray, cutoff: float) -> np.ndarray:
    return 0.5 * (np.cos(math.pi * d / cutoff) + 1.0)


def encode_3d(sub: Subgraph, conformer: int, params: ParamStore,
              cfg: EncoderConfig) -> Tensor:
    """Continuous-filter node embeddings for one conformer, (n_atoms, schnet_hidden)."""
    if not 0 <= conformer < len(sub.conformers):
        raise ValueError(
            f"{sub.parent_id}: conformer {conformer} missing "
            f"({len(sub.conformers)} present)")
    coords = sub.conformers[conformer]
    n = sub.n_atoms
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    pair = (dist < cfg.schnet_cutoff) & ~np.eye(n, dtype=bool)
    src, dst = np.nonzero(pair)
    d = dist[src, dst]
    zs = np.asarray([a.z for a in sub.atoms], dtype=np.intp)
    x = T.take(params["embed3d.z"], zs)
    if src.size == 0:
        return x
    rbf = Tensor(_rbf_expand(d, cfg))
    envelope = Tensor(_cosine_envelope(d, cfg.schnet_cutoff)[:, None])
    for i in range(cfg.schnet_interactions):
        hid = T.softplus(T.linear(rbf, params[f"schnet{i}.filter.w1"],
                                  params[f"schnet{i}.filter.b1"]))
        filt = T.mul(T.linear(hid, params[f"schnet{i}.filter.w2"],
                              params[f"schnet{i}.filter.b2"]), envelope)
        msg = T.mul(filt, T.linear(T.take(x, src), params[f"schnet{i}.in.w"],
                                   params[f"schnet{i}.in.b"]))
        x = T.add(x, T.segment_sum(msg, dst, n))
    return x


# ---- token assembly and fusion ----

def assemble(sub: Subgraph, params: ParamStore, cfg: EncoderConfig) -> TokenSequence:
    """Project per-node embeddings and lay out the token sequence."""
    d = cfg.fusion_hidden
    cls = T.reshape(params["tok.cls"], (1, d))
    sep = T.reshape(params["tok.sep"], (1, d))
    parts = [cls, sep]
    kinds = [KIND_CLS, KIND_SEP]
    prov: list[tuple[int | None, int | None]] = [(None, None), (None, None)]
    if cfg.mode in ("2D-only", "MM"):
        h2 = encode_2d(sub, params, cfg)
        tok2 = T.add(T.linear(h2, params["proj2d.w"], params["proj2d.b"]),
                     params["tok.mod2d"])
        parts.append(tok2)
        kinds.extend([KIND_NODE2D] * sub.n_atoms)
        prov.extend((v, None) for v in range(sub.n_atoms))
        parts.append(sep)
        kinds.append(KIND_SEP)
        prov.append((None, None))
    if cfg.mode in ("3D-only", "MM"):
        if not sub.conformers:
            raise ValueError(f"{sub.parent_id}: mode {cfg.mode} needs >= 1 conformer")
        for c in range(len(sub.conformers)):
            h3 = encode_3d(sub, c, params, cfg)
            tok3 = T.add(T.linear(h3, params["proj3d.w"], params["proj3d.b"]),
                         params["tok.mod3d"])
            parts.append(tok3)
            kinds.extend([KIND_NODE3D] * sub.n_atoms)
            prov.extend((v, c) for v in range(sub.n_atoms))
        parts.append(sep)
        kinds.append(KIND_SEP)
        prov.append((None, None))
    tokens = T.concat(parts, axis=0)
    return TokenSequence(tokens=tokens, kinds=np.asarray(kinds, dtype=np.intp),
                         provenance=tuple(prov))


def fuse(seq: TokenSequence, params: ParamStore, cfg: EncoderConfig,
         dropout_p: float = 0.0,
         rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Pre-norm transformer over the token sequence; returns (cls, tokens)."""
    x = seq.tokens
    for i in range(cfg.fusion_layers):
        pre = f"fuse{i}"
        h = T.layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        q = T.linear(h, params[f"{pre}.wq"], params[f"{pre}.bq"])
        k = T.linear(h, params[f"{pre}.wk"], params[f"{pre}.bk"])
        v = T.linear(h, params[f"{pre}.wv"], params[f"{pre}.bv"])
        attn = T.softmax_attention(q, k, v, cfg.fusion_heads)
        x = T.add(x, T.linear(attn, params[f"{pre}.wo"], params[f"{pre}.bo"]))
        h = T.layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        ff = T.gelu(T.linear(h, params[f"{pre}.ffn.w1"], params[f"{pre}.ffn.b1"]))
        ff = T.linear(ff, params[f"{pre}.ffn.w2"], params[f"{pre}.ffn.b2"])
        ff = T.dropout(ff, dropout_p, rng)
        x = T.add(x, ff)
    x = T.layer_norm(x, params["fuse.lnf.g"], params["fuse.lnf.b"])
    return x[0], x


def encode_subgraph(sub: Subgraph, params: ParamStore,
                    cfg: EncoderConfig) -> tuple[Tensor, Tensor]:
    """Assemble + fuse; returns (cls, tokens)."""
    return fuse(assemble(sub, params, cfg), params, cfg)
