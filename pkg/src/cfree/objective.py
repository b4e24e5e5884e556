"""Latent-prediction pretraining between subgraph views.

One step: encode the context view with the trainable encoder, map it
through the predictor (a small transformer over the full context token
sequence, an MLP on the context CLS, or nothing at all), encode the
target view with the EMA encoder behind a stop-gradient, and regress
predicted CLS onto target CLS in latent space. The loss is the mean
over the batch of the summed squared distances of each molecule's view
pairs. After the optimizer step the target parameters are blended as
p_bar <- tau * p_bar + (1 - tau) * p.

The learning rate warms up linearly then decays on a cosine to zero;
tau ramps linearly to 1.0 across training. Both are interpolated per
step via fractional epochs.
"""

from __future__ import annotations

import csv
import math
import os
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .checkpoint import ParamStore, save_checkpoint
from .encoders import (ConfigError, EncoderConfig, TokenSequence, assemble,
                       fuse, init_encoder_params)
from .tensor import Tensor
from .views import ViewConfig, ViewPair, sample_views

__all__ = [
    "PREDICTOR_KINDS", "PredictorConfig", "ScheduleConfig", "AdamState",
    "adam_step", "TrainState", "StepDiagnostics", "ema_update",
    "init_predictor_params", "predict", "latent_loss", "schedules",
    "pretrain_step", "pretrain", "PretrainResult", "derive_rng",
    "METRICS_CSV_HEADER", "write_metrics_csv",
]

PREDICTOR_KINDS = ("none", "mlp", "transformer")

METRICS_CSV_HEADER = ("epoch", "train_loss", "val_loss", "lr", "tau", "embedding_std")


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "transformer"
    layers: int = 2
    heads: int = 4

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ConfigError(f"predictor kind must be one of {PREDICTOR_KINDS}, "
                              f"got {self.kind!r}")
        if self.kind == "transformer" and (self.layers < 1 or self.heads < 1):
            raise ConfigError("transformer predictor needs layers >= 1 and heads >= 1")

    @classmethod
    def paper_scale(cls) -> "PredictorConfig":
        return cls(kind="transformer", layers=4, heads=4)


@dataclass(frozen=True)
class ScheduleConfig:
    lr_start: float = 2e-6
    lr_peak: float = 5e-5
    warmup_epochs: int = 30
    total_epochs: int = 200
    tau_start: float = 0.995
    tau_end: float = 1.0
    batch_size: int = 256
    weight_decay: float = 0.04

    def __post_init__(self):
        if not 0 <= self.lr_start <= self.lr_peak:
            raise ConfigError("need 0 <= lr_start <= lr_peak")
        if not 0 <= self.warmup_epochs <= self.total_epochs or self.total_epochs < 1:
            raise ConfigError("need 0 <= warmup_epochs <= total_epochs and total >= 1")
        if not 0.0 <= self.tau_start <= self.tau_end <= 1.0:
            raise ConfigError("need 0 <= tau_start <= tau_end <= 1")
        if self.batch_size < 1 or self.weight_decay < 0:
            raise ConfigError("batch_size >= 1 and weight_decay >= 0 required")


def schedules(epoch: float, cfg: ScheduleConfig) -> tuple[float, float]:
    """(lr, tau) at a fractional epoch.

    lr: linear lr_start -> lr_peak over warmup_epochs, then cosine to 0 at
    total_epochs. tau: linear tau_start -> tau_end over all of training.
    """
    e = float(epoch)
    if e < 0 or e > cfg.total_epochs:
        raise ValueError(f"epoch {e} outside [0, {cfg.total_epochs}]")
    if cfg.warmup_epochs > 0 and e < cfg.warmup_epochs:
        lr = cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * e / cfg.warmup_epochs
    else:
        span = max(cfg.total_epochs - cfg.warmup_epochs, 1)
        frac = (e - cfg.warmup_epochs) / span
        lr = cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * min(max(frac, 0.0), 1.0)))
    tau = cfg.tau_start + (cfg.tau_end - cfg.tau_start) * e / cfg.total_epochs
    return lr, tau


# ---- EMA ----

def ema_update(target: ParamStore, context: ParamStore, tau: float) -> ParamStore:
    """In-place p_bar <- tau * p_bar + (1 - tau) * p; no gradients recorded."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if not target.same_structure(context):
        raise ValueError("target and context stores have different structure")
    for name, p_bar in target.items():
        p = context[name]
        p_bar.data *= tau
        p_bar.data += (1.0 - tau) * p.data
    return target


# ---- predictor ----

def init_predictor_params(cfg: PredictorConfig, width: int,
                          rng: np.random.Generator) -> ParamStore:
    from .encoders import _add_attention_block, _add_layer_norm, _bias, _glorot

    store = ParamStore()
    if cfg.kind == "none":
        return store
    if cfg.kind == "transformer":
        if width % cfg.heads != 0:
            raise ConfigError(f"fusion width {width} not divisible by predictor "
                              f"heads {cfg.heads}")
        for i in range(cfg.layers):
            _add_attention_block(store, f"pred{i}", width, rng)
        _add_layer_norm(store, "pred.lnf", width)
    store["mlp.w1"] = _glorot(rng, width, width)
    store["mlp.b1"] = _bias(width)
    store["mlp.w2"] = _glorot(rng, width, width)
    store["mlp.b2"] = _bias(width)
    return store


def predict(cls: Tensor, tokens: Tensor, cfg: PredictorConfig,
            params: ParamStore, heads_width: int | None = None) -> Tensor:
    """Map context encoder output to a predicted target embedding.

    kind=transformer runs over the full token sequence and reads its CLS
    position; kind=mlp sees only the CLS vector. kind=none must be
    bypassed by the caller (identity on the context CLS).
    """
    if cfg.kind == "none":
        raise ConfigError("predictor kind 'none' has no forward; bypass it")
    if cfg.kind == "transformer":
        x = tokens
        for i in range(cfg.layers):
            pre = f"pred{i}"
            h = T.layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
            q = T.linear(h, params[f"{pre}.wq"], params[f"{pre}.bq"])
            k = T.linear(h, params[f"{pre}.wk"], params[f"{pre}.bk"])
            v = T.linear(h, params[f"{pre}.wv"], params[f"{pre}.bv"])
            attn = T.softmax_attention(q, k, v, cfg.heads)
            x = T.add(x, T.linear(attn, params[f"{pre}.wo"], params[f"{pre}.bo"]))
            h = T.layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
            ff = T.gelu(T.linear(h, params[f"{pre}.ffn.w1"], params[f"{pre}.ffn.b1"]))
            x = T.add(x, T.linear(ff, params[f"{pre}.ffn.w2"], params[f"{pre}.ffn.b2"]))
        x = T.layer_norm(x, params["pred.lnf.g"], params["pred.lnf.b"])
        feat = x[0]
    else:
        feat = cls
    hid = T.gelu(T.add(T.matmul(T.reshape(feat, (1, -1)), params["mlp.w1"]),
                       params["mlp.b1"]))
    out = T.add(T.matmul(hid, params["mlp.w2"]), params["mlp.b2"])
    return T.reshape(out, (-1,))


# ---- loss ----

def latent_loss(pairs: list[list[tuple[Tensor, Tensor]]]) -> Tensor:
    """Mean over batch items of summed squared distances of their view pairs.

    ``pairs`` is grouped per molecule: one inner list of (predicted,
    target) embeddings per batch item.
    """
    if not pairs or any(not group for group in pairs):
        raise ValueError("latent_loss needs a non-empty batch of non-empty groups")
    total = None
    for group in pairs:
        for pred, tgt in group:
            if pred.shape != tgt.shape:
                raise T.ShapeError(f"embedding shapes disagree: {pred.shape} vs {tgt.shape}")
            diff = T.sub(pred, tgt)
            term = T.reduce_sum(T.mul(diff, diff))
            total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / len(pairs))


# ---- optimizer ----

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(stores: dict[str, ParamStore], lr: float, weight_decay: float,
              state: AdamState) -> None:
    """Adam with decoupled weight decay; grads are consumed and cleared."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for sname, store in stores.items():
        for pname, p in store.items():
            if not p.requires_grad:
                continue
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            key = f"{sname}/{pname}"
            m = state.m.get(key)
            if m is None:
                m = np.zeros_like(p.data)
                state.m[key] = m
                state.v[key] = np.zeros_like(p.data)
            v = state.v[key]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
            if weight_decay:
                update = update + weight_decay * p.data
            p.data -= lr * update
            p.zero_grad()


# ---- training step ----

@dataclass
class StepDiagnostics:
    loss: float
    embedding_std: float  # mean over dims of per-dim std of target CLS across batch
    n_pairs: int


@dataclass
class TrainState:
    step: int
    epoch: int
    context_params: ParamStore
    target_params: ParamStore
    predictor_params: ParamStore
    opt: AdamState
    seed: int
    diagnostics: list = field(default_factory=list)


def _encode_views(pair: ViewPair, state: TrainState, enc_cfg: EncoderConfig,
                  pred_cfg: PredictorConfig) -> tuple[Tensor, Tensor]:
    ctx_seq = assemble(pair.context, state.context_params, enc_cfg)
    ctx_cls, ctx_tokens = fuse(ctx_seq, state.context_params, enc_cfg)
    if pred_cfg.kind == "none":
        predicted = ctx_cls
    else:
        predicted = predict(ctx_cls, ctx_tokens, pred_cfg, state.predictor_params)
    tgt_cls, _ = fuse(assemble(pair.target, state.target_params, enc_cfg),
                      state.target_params, enc_cfg)
    return predicted, T.stop_gradient(tgt_cls)


def pretrain_step(batch: list[ViewPair], state: TrainState, enc_cfg: EncoderConfig,
                  pred_cfg: PredictorConfig, lr: float, tau: float,
                  weight_decay: float) -> tuple[float, StepDiagnostics]:
    """One optimizer step over a batch of view pairs (grouped per molecule)."""
    if not batch:
        raise ValueError("empty batch")
    groups: dict[str, list[tuple[Tensor, Tensor]]] = {}
    target_cls: list[np.ndarray] = []
    for pair in batch:
        predicted, tgt = _encode_views(pair, state, enc_cfg, pred_cfg)
        groups.setdefault(pair.parent_id, []).append((predicted, tgt))
        target_cls.append(tgt.data)
    loss = latent_loss(list(groups.values()))
    loss_val = loss.item()
    loss.backward()
    adam_step({"context": state.context_params, "predictor": state.predictor_params},
              lr, weight_decay, state.opt)
    ema_update(state.target_params, state.context_params, tau)
    stacked = np.stack(target_cls)
    diag = StepDiagnostics(loss=loss_val,
                           embedding_std=float(stacked.std(axis=0).mean()),
                           n_pairs=len(batch))
    state.step += 1
    state.diagnostics.append(diag)
    return loss_val, diag


# ---- full pretraining loop ----

@dataclass
class PretrainResult:
    metrics_path: str
    checkpoint_path: str
    history: list[dict]
    best_val_loss: float
    best_epoch: int
    skipped_molecules: int


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Deterministic child stream from an integer seed and hashable keys."""
    ints = [seed & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            ints.append(zlib.crc32(key.encode()))
        else:
            ints.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(ints))


def _views_for(mol, view_cfg: ViewConfig, seed: int, tag: str,
               epoch: int) -> tuple[list[ViewPair], int]:
    return sample_views(mol, view_cfg, derive_rng(seed, tag, epoch, mol.id))


def _batch_loss_eval(pairs: list[ViewPair], state: TrainState,
                     enc_cfg: EncoderConfig, pred_cfg: PredictorConfig) -> float:
    groups: dict[str, list[tuple[Tensor, Tensor]]] = {}
    for pair in pairs:
        predicted, tgt = _encode_views(pair, state, enc_cfg, pred_cfg)
        groups.setdefault(pair.parent_id, []).append((T.stop_gradient(predicted), tgt))
    return latent_loss(list(groups.values())).item()


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        for row in rows:
            writer.writerow([row["epoch"], repr(row["train_loss"]),
                             repr(row["val_loss"]), repr(row["lr"]),
                             repr(row["tau"]), repr(row["embedding_std"])])


def pretrain(molecules, enc_cfg: EncoderConfig, pred_cfg: PredictorConfig,
             sched: ScheduleConfig, view_cfg: ViewConfig, seed: int,
             out_dir: str, patience: int | None = None,
             log_fn=None) -> PretrainResult:
    """Run the full pretraining loop and write metrics + best checkpoint.

    The dataset is split 90/10 into train/val by a seeded shuffle. Every
    epoch logs (train_loss, val_loss, lr, tau, embedding_std); the
    checkpoint with the best val loss holds all three parameter stores.
    """
    molecules = list(molecules)
    if len(molecules) < 2:
        raise ValueError("pretraining needs at least 2 molecules")
    os.makedirs(out_dir, exist_ok=True)
    order = derive_rng(seed, "split").permutation(len(molecules))
    n_val = max(1, len(molecules) // 10)
    val_set = [molecules[i] for i in order[:n_val]]
    train_set = [molecules[i] for i in order[n_val:]]

    context = init_encoder_params(enc_cfg, derive_rng(seed, "init-encoder"))
    target = context.copy(requires_grad=False)
    predictor = init_predictor_params(pred_cfg, enc_cfg.fusion_hidden,
                                      derive_rng(seed, "init-predictor"))
    state = TrainState(step=0, epoch=0, context_params=context, target_params=target,
                       predictor_params=predictor, opt=AdamState(), seed=seed)

    meta = {
        "schedule": sched.__dict__.copy(),
        "encoder": enc_cfg.__dict__.copy(),
        "predictor": pred_cfg.__dict__.copy(),
        "views": {"n_anchors": view_cfg.n_anchors, "k_choices": list(view_cfg.k_choices)},
        "seed": seed,
    }
    metrics_path = os.path.join(out_dir, "metrics.csv")
    ckpt_path = os.path.join(out_dir, "checkpoint.ckpt")

    history: list[dict] = []
    best_val = math.inf
    best_epoch = -1
    skipped_total = 0
    steps_per_epoch = max(1, math.ceil(len(train_set) / sched.batch_size))
    for epoch in range(sched.total_epochs):
        state.epoch = epoch
        perm = derive_rng(seed, "order", epoch).permutation(len(train_set))
        epoch_losses = []
        epoch_stds = []
        lr = tau = 0.0
        for bstep in range(steps_per_epoch):
            batch_mols = [train_set[i] for i in
                          perm[bstep * sched.batch_size:(bstep + 1) * sched.batch_size]]
            if not batch_mols:
                continue
            batch_pairs: list[ViewPair] = []
            for mol in batch_mols:
                pairs, skipped = _views_for(mol, view_cfg, seed, "train", epoch)
                skipped_total += skipped
                batch_pairs.extend(pairs)
            if not batch_pairs:
                continue
            lr, tau = schedules(epoch + bstep / steps_per_epoch, sched)
            loss_val, diag = pretrain_step(batch_pairs, state, enc_cfg, pred_cfg,
                                           lr, tau, sched.weight_decay)
            if not math.isfinite(loss_val):
                dump = os.path.join(out_dir, "state-dump.ckpt")
                save_checkpoint(dump, {"context": context, "target": target,
                                       "predictor": predictor},
                                meta | {"aborted_at_step": state.step})
                raise FloatingPointError(f"non-finite loss at step {state.step}; "
                                         f"state dumped to {dump}")
            epoch_losses.append(loss_val)
            epoch_stds.append(diag.embedding_std)
        val_pairs: list[ViewPair] = []
        for mol in val_set:
            pairs, skipped = _views_for(mol, view_cfg, seed, "val", epoch)
            skipped_total += skipped
            val_pairs.extend(pairs)
        val_loss = (_batch_loss_eval(val_pairs, state, enc_cfg, pred_cfg)
                    if val_pairs else float("nan"))
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
            "val_loss": val_loss,
            "lr": lr,
            "tau": tau,
            "embedding_std": float(np.mean(epoch_stds)) if epoch_stds else float("nan"),
        }
        history.append(row)
        if log_fn is not None:
            log_fn(f"epoch {epoch}: train {row['train_loss']:.6g} "
                   f"val {row['val_loss']:.6g} std {row['embedding_std']:.4g}")
        if math.isfinite(val_loss) and val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            save_checkpoint(ckpt_path, {"context": context, "target": target,
                                        "predictor": predictor},
                            meta | {"epoch": epoch, "val_loss": val_loss})
        if patience is not None and best_epoch >= 0 and epoch - best_epoch >= patience:
            break
    write_metrics_csv(metrics_path, history)
    if best_epoch < 0:  # no epoch produced a finite val loss
        save_checkpoint(ckpt_path, {"context": context, "target": target,
                                    "predictor": predictor},
                        meta | {"epoch": sched.total_epochs - 1, "val_loss": None})
    return PretrainResult(metrics_path=metrics_path, checkpoint_path=ckpt_path,
                          history=history, best_val_loss=best_val,
                          best_epoch=best_epoch, skipped_molecules=skipped_total)
