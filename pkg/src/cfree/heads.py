"""Downstream heads: whole-graph probe and DeepSets over k-EgoNets.

embed_whole encodes the full molecule and returns its CLS embedding.
embed_ds extracts an ego-net at every node (or at a seeded sample of
``cap`` nodes), encodes each, and combines them as rho(sum(phi(.)))
with 2-layer MLPs. Subgraphs are summed in sorted-anchor order, so the
result is bitwise independent of list order.

fit_head trains either head on top of a (frozen or trainable) backbone:
multi-task binary classification uses sigmoid + BCE with missing-label
masking and reports ROC-AUC; regression uses MAE for both loss and
metric.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .checkpoint import ParamStore
from .encoders import ConfigError, EncoderConfig, encode_subgraph
from .molgraph import Molecule
from .objective import AdamState, adam_step, derive_rng
from .tensor import Tensor
from .views import k_ego_net, subgraph_from_molecule, whole_molecule_subgraph

__all__ = [
    "HEAD_KINDS", "TASK_KINDS", "ProbeConfig", "Backbone", "embed_whole",
    "embed_ds", "init_linear_head", "init_ds_head", "fit_head", "FitResult",
    "roc_auc", "mae", "PREDICTIONS_CSV_HEADER", "write_predictions_csv",
]

log = logging.getLogger(__name__)

HEAD_KINDS = ("LIN", "DS")
TASK_KINDS = ("classification", "regression")

PREDICTIONS_CSV_HEADER = ("id", "task", "score")


@dataclass(frozen=True)
class ProbeConfig:
    head: str = "LIN"
    freeze_backbone: bool = True
    task: str = "regression"
    ds_anchor_cap: int = 32
    ds_k: int = 3

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.task not in TASK_KINDS:
            raise ConfigError(f"task must be one of {TASK_KINDS}, got {self.task!r}")
        if self.ds_anchor_cap < 1 or self.ds_k < 1:
            raise ConfigError("ds_anchor_cap and ds_k must be >= 1")


class Backbone(NamedTuple):
    params: ParamStore
    cfg: EncoderConfig


def embed_whole(m: Molecule, backbone: Backbone) -> Tensor:
    """CLS embedding of the whole molecule, shape (fusion_hidden,)."""
    cls, _ = encode_subgraph(whole_molecule_subgraph(m), backbone.params, backbone.cfg)
    return cls


def _ds_anchors(m: Molecule, cap: int, rng: np.random.Generator | None) -> np.ndarray:
    if m.n_atoms <= cap:
        return np.arange(m.n_atoms)
    if rng is None:
        rng = derive_rng(0, "ds-anchors", m.id)
    picked = rng.choice(m.n_atoms, size=cap, replace=False)
    return np.sort(picked)  # canonical order by anchor index


def ds_subgraphs(m: Molecule, k: int, cap: int,
                 rng: np.random.Generator | None = None):
    return [subgraph_from_molecule(m, k_ego_net(m, int(a), k))
            for a in _ds_anchors(m, cap, rng)]


def _ds_combine(cls_list: list[Tensor], head: ParamStore) -> Tensor:
    pooled = None
    for cls in cls_list:  # fixed order: anchors ascend
        phi = T.linear(T.relu(T.linear(T.reshape(cls, (1, -1)), head["phi.w1"],
                                       head["phi.b1"])), head["phi.w2"], head["phi.b2"])
        pooled = phi if pooled is None else T.add(pooled, phi)
    out = T.linear(T.relu(T.linear(pooled, head["rho.w1"], head["rho.b1"])),
                   head["rho.w2"], head["rho.b2"])
    return T.reshape(out, (-1,))


def embed_ds(m: Molecule, backbone: Backbone, head: ParamStore, k: int = 3,
             cap: int = 32, rng: np.random.Generator | None = None) -> Tensor:
    """DeepSets-over-ego-nets embedding: rho(sum_i phi(cls_i))."""
    subs = ds_subgraphs(m, k, cap, rng)
    cls_list = [encode_subgraph(s, backbone.params, backbone.cfg)[0] for s in subs]
    return _ds_combine(cls_list, head)


def init_linear_head(width: int, n_tasks: int, rng: np.random.Generator) -> ParamStore:
    from .encoders import _bias, _glorot

    store = ParamStore()
    store["lin.w"] = _glorot(rng, width, n_tasks)
    store["lin.b"] = _bias(n_tasks)
    return store


def init_ds_head(width: int, n_tasks: int, rng: np.random.Generator) -> ParamStore:
    from .encoders import _bias, _glorot

    store = ParamStore()
    store["phi.w1"] = _glorot(rng, width, width)
    store["phi.b1"] = _bias(width)
    store["phi.w2"] = _glorot(rng, width, width)
    store["phi.b2"] = _bias(width)
    store["rho.w1"] = _glorot(rng, width, width)
    store["rho.b1"] = _bias(width)
    store["rho.w2"] = _glorot(rng, width, n_tasks)
    store["rho.b2"] = _bias(n_tasks)
    return store


# ---- metrics ----

def roc_auc(scores, labels) -> float:
    """Rank-statistic ROC-AUC with midrank tie handling."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be matching 1-D arrays")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos + n_neg != y.size:
        raise ValueError("labels must be 0/1")
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mae(preds, targets) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("preds and targets must match")
    return float(np.abs(p - t).mean())


# ---- fitting ----

@dataclass
class FitResult:
    head_params: ParamStore
    backbone: Backbone
    tasks: list[str]
    metrics: dict                      # task -> metric value (on test)
    metric_name: str
    predictions: list[tuple[str, str, float]]
    history: list[dict] = field(default_factory=list)


def _label_matrix(mols: list[Molecule], tasks: list[str]) -> tuple[np.ndarray, np.ndarray]:
    y = np.zeros((len(mols), len(tasks)))
    mask = np.zeros((len(mols), len(tasks)), dtype=bool)
    for i, m in enumerate(mols):
        for j, t in enumerate(tasks):
            val = m.labels.get(t)
            if val is not None:
                y[i, j] = float(val)
                mask[i, j] = True
    return y, mask


def _masked_loss(logits: Tensor, y: np.ndarray, mask: np.ndarray, task: str) -> Tensor:
    """Mean BCE (sigmoid) or MAE over observed labels only."""
    weight = mask.astype(np.float64) / max(mask.sum(), 1)
    w = Tensor(weight)
    yt = Tensor(y)
    if task == "classification":
        # bce(x, y) = softplus(x) - x * y, stable for both signs
        per = T.sub(T.softplus(logits), T.mul(logits, yt))
    else:
        per = T.absolute(T.sub(logits, yt))
    return T.reduce_sum(T.mul(per, w))


def _forward_logits(mols, cfg: ProbeConfig, backbone: Backbone, head: ParamStore,
                    cached) -> Tensor:
    if cfg.head == "LIN":
        if cached is not None:
            emb = cached
        else:
            emb = T.concat([T.reshape(embed_whole(m, backbone), (1, -1)) for m in mols], 0)
        return T.linear(emb, head["lin.w"], head["lin.b"])
    rows = []
    for i, m in enumerate(mols):
        if cached is not None:
            cls_list = cached[i]
        else:
            subs = ds_subgraphs(m, cfg.ds_k, cfg.ds_anchor_cap)
            cls_list = [encode_subgraph(s, backbone.params, backbone.cfg)[0]
                        for s in subs]
        rows.append(T.reshape(_ds_combine(cls_list, head), (1, -1)))
    return T.concat(rows, axis=0)


def _precompute(mols, cfg: ProbeConfig, backbone: Backbone):
    """Frozen-backbone embeddings, computed once as constants."""
    if cfg.head == "LIN":
        data = np.stack([embed_whole(m, backbone).data for m in mols])
        return Tensor(data)
    cache = []
    for m in mols:
        subs = ds_subgraphs(m, cfg.ds_k, cfg.ds_anchor_cap)
        cache.append([Tensor(encode_subgraph(s, backbone.params, backbone.cfg)[0].data)
                      for s in subs])
    return cache


def fit_head(splits: dict[str, list[Molecule]], cfg: ProbeConfig, backbone: Backbone,
             tasks: list[str], seed: int = 0, epochs: int = 100, lr: float = 1e-3,
             batch_size: int = 32, log_fn=None) -> FitResult:
    """Train a head (optionally the backbone too) and report test metrics.

    ``splits`` maps 'train'/'val'/'test' to molecule lists. Tasks with no
    observed train label are skipped with a warning.
    """
    train, val, test = splits["train"], splits["val"], splits["test"]
    if not train or not val or not test:
        raise ValueError("train/val/test splits must all be non-empty")
    y_train, m_train = _label_matrix(train, tasks)
    kept = [j for j in range(len(tasks)) if m_train[:, j].any()]
    for j in range(len(tasks)):
        if j not in kept:
            log.warning("task %r has no labeled training examples; skipped", tasks[j])
    if not kept:
        raise ValueError("no task has a labeled training example")
    tasks = [tasks[j] for j in kept]
    y_train, m_train = y_train[:, kept], m_train[:, kept]
    y_val, m_val = _label_matrix(val, tasks)
    y_test, m_test = _label_matrix(test, tasks)

    rng = derive_rng(seed, "head-init")
    width = backbone.cfg.fusion_hidden
    head = (init_linear_head(width, len(tasks), rng) if cfg.head == "LIN"
            else init_ds_head(width, len(tasks), rng))

    frozen = cfg.freeze_backbone
    checksum_before = backbone.params.checksum()
    cache_train = _precompute(train, cfg, backbone) if frozen else None
    cache_val = _precompute(val, cfg, backbone) if frozen else None

    trainable = {"head": head}
    if not frozen:
        for p in backbone.params.tensors():
            p.requires_grad = True
        trainable["backbone"] = backbone.params
    opt = AdamState()
    best_val = math.inf
    best_head = head.copy()
    best_backbone = backbone.params.copy() if not frozen else None
    history = []
    order_rng = derive_rng(seed, "head-order")
    n = len(train)
    for epoch in range(epochs):
        perm = order_rng.permutation(n)
        losses = []
        for lo in range(0, n, batch_size):
            idx = perm[lo:lo + batch_size]
            mols = [train[i] for i in idx]
            if frozen:
                cached = (cache_train[idx] if cfg.head == "LIN"
                          else [cache_train[i] for i in idx])
            else:
                cached = None
            logits = _forward_logits(mols, cfg, backbone, head, cached)
            loss = _masked_loss(logits, y_train[idx], m_train[idx], cfg.task)
            loss.backward()
            adam_step(trainable, lr, 0.0, opt)
            losses.append(loss.item())
        val_logits = _forward_logits(val, cfg, backbone, head,
                                     cache_val if frozen else None)
        val_loss = _masked_loss(val_logits, y_val, m_val, cfg.task).item()
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_loss": val_loss})
        if log_fn is not None:
            log_fn(f"epoch {epoch}: train {np.mean(losses):.5g} val {val_loss:.5g}")
        if val_loss < best_val:
            best_val = val_loss
            best_head = head.copy()
            if not frozen:
                best_backbone = backbone.params.copy()
    for name in head.names():
        head[name].data[...] = best_head[name].data
    if not frozen and best_backbone is not None:
        for name in backbone.params.names():
            backbone.params[name].data[...] = best_backbone[name].data
        for p in backbone.params.tensors():
            p.requires_grad = False
    if frozen:
        assert backbone.params.checksum() == checksum_before, "frozen backbone moved"

    test_logits = _forward_logits(test, cfg, backbone, head,
                                  _precompute(test, cfg, backbone) if frozen else None)
    raw = test_logits.data
    metrics = {}
    predictions: list[tuple[str, str, float]] = []
    metric_name = "roc_auc" if cfg.task == "classification" else "mae"
    for j, task in enumerate(tasks):
        obs = m_test[:, j]
        if cfg.task == "classification":
            scores = 1.0 / (1.0 + np.exp(-raw[:, j]))
            try:
                metrics[task] = roc_auc(scores[obs], y_test[obs, j].astype(int))
            except ValueError:
                metrics[task] = float("nan")
        else:
            scores = raw[:, j]
            metrics[task] = mae(scores[obs], y_test[obs, j]) if obs.any() else float("nan")
        for i, m in enumerate(test):
            predictions.append((m.id, task, float(scores[i])))
    return FitResult(head_params=head, backbone=backbone, tasks=tasks, metrics=metrics,
                     metric_name=metric_name, predictions=predictions, history=history)


def write_predictions_csv(path, predictions) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_CSV_HEADER)
        for mol_id, task, score in predictions:
            writer.writerow([mol_id, task, repr(float(score))])
