"""Schedules, EMA, latent loss, predictor, optimizer, pretraining loop."""

import math

import numpy as np
import pytest

from cfree import objective as O
from cfree import tensor as T
from cfree.checkpoint import ParamStore, load_checkpoint
from cfree.datagen import random_molecules
from cfree.encoders import ConfigError, EncoderConfig, init_encoder_params
from cfree.objective import (AdamState, PredictorConfig, ScheduleConfig,
                             TrainState, adam_step, derive_rng, ema_update,
                             init_predictor_params, latent_loss, predict,
                             pretrain, pretrain_step, schedules)
from cfree.tensor import Tensor
from cfree.views import ViewConfig, make_view_pair

TINY_ENC = EncoderConfig(gine_layers=1, gine_hidden=8, schnet_hidden=8,
                         schnet_interactions=1, fusion_layers=1, fusion_heads=2,
                         fusion_hidden=8, mode="2D-only")


# ---- schedules ----

def test_schedule_endpoints():
    cfg = ScheduleConfig(lr_start=2e-6, lr_peak=5e-5, warmup_epochs=30,
                         total_epochs=200, tau_start=0.995, tau_end=1.0)
    lr0, tau0 = schedules(0, cfg)
    assert lr0 == pytest.approx(2e-6)
    assert tau0 == pytest.approx(0.995)
    lr_w, _ = schedules(30, cfg)
    assert lr_w == pytest.approx(5e-5)
    lr_end, tau_end = schedules(200, cfg)
    assert lr_end == pytest.approx(0.0, abs=1e-18)
    assert tau_end == pytest.approx(1.0)
    lr_mid, _ = schedules(30 + (200 - 30) / 2, cfg)
    assert lr_mid == pytest.approx(5e-5 / 2)


def test_schedule_is_continuous_at_warmup_boundary():
    cfg = ScheduleConfig(warmup_epochs=10, total_epochs=50)
    lr_before, _ = schedules(10 - 1e-9, cfg)
    lr_after, _ = schedules(10, cfg)
    assert lr_before == pytest.approx(lr_after, rel=1e-6)


def test_schedule_monotone_warmup_then_decay():
    cfg = ScheduleConfig(warmup_epochs=5, total_epochs=20)
    grid = np.linspace(0, 20, 201)
    lrs = [schedules(e, cfg)[0] for e in grid]
    peak_idx = int(np.argmax(lrs))
    assert grid[peak_idx] == pytest.approx(5.0)
    assert all(a <= b + 1e-18 for a, b in zip(lrs[:peak_idx], lrs[1:peak_idx + 1]))
    assert all(a >= b - 1e-18 for a, b in zip(lrs[peak_idx:-1], lrs[peak_idx + 1:]))
    taus = [schedules(e, cfg)[1] for e in grid]
    assert all(a <= b + 1e-18 for a, b in zip(taus, taus[1:]))


def test_schedule_rejects_out_of_range():
    cfg = ScheduleConfig(warmup_epochs=2, total_epochs=10)
    with pytest.raises(ValueError):
        schedules(-0.1, cfg)
    with pytest.raises(ValueError):
        schedules(10.1, cfg)
    with pytest.raises(ConfigError):
        ScheduleConfig(tau_start=1.01)
    with pytest.raises(ConfigError):
        ScheduleConfig(lr_start=1e-3, lr_peak=1e-4)
    with pytest.raises(ConfigError):
        ScheduleConfig(warmup_epochs=11, total_epochs=10)


# ---- EMA ----

def _stores(seed=0):
    rng = np.random.default_rng(seed)
    tgt, ctx = ParamStore(), ParamStore()
    for name in ("w", "b"):
        tgt[name] = T.randn(rng, (4, 3))
        ctx[name] = T.randn(rng, (4, 3), requires_grad=True)
    return tgt, ctx


def test_ema_extremes():
    tgt, ctx = _stores()
    before = tgt.copy()
    ema_update(tgt, ctx, tau=1.0)
    for n in tgt.names():
        assert np.array_equal(tgt[n].data, before[n].data)
    ema_update(tgt, ctx, tau=0.0)
    for n in tgt.names():
        assert np.array_equal(tgt[n].data, ctx[n].data)


def test_ema_closed_form_after_n_updates():
    tgt, ctx = _stores(seed=3)
    p0 = {n: tgt[n].data.copy() for n in tgt.names()}
    tau, n_steps = 0.97, 25
    for _ in range(n_steps):
        ema_update(tgt, ctx, tau)
    for n in tgt.names():
        expect = tau ** n_steps * p0[n] + (1 - tau ** n_steps) * ctx[n].data
        assert np.abs(tgt[n].data - expect).max() < 1e-12


def test_ema_validates_inputs():
    tgt, ctx = _stores()
    with pytest.raises(ValueError):
        ema_update(tgt, ctx, tau=1.5)
    other = ParamStore()
    other["w"] = T.zeros((4, 3))
    with pytest.raises(ValueError):
        ema_update(tgt, other, tau=0.5)


# ---- latent loss ----

def test_latent_loss_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n_groups = int(rng.integers(1, 5))
        groups, raw = [], []
        for _ in range(n_groups):
            n_pairs = int(rng.integers(1, 4))
            g, r = [], []
            for _ in range(n_pairs):
                a = rng.standard_normal(6)
                b = rng.standard_normal(6)
                g.append((Tensor(a.copy()), Tensor(b.copy())))
                r.append((a, b))
            groups.append(g)
            raw.append(r)
        got = latent_loss(groups).item()
        want = 0.0
        for r in raw:
            for a, b in r:
                want += float(((a - b) ** 2).sum())
        want /= len(raw)
        assert got == pytest.approx(want, rel=1e-12)


def test_latent_loss_gradient_is_2diff_over_m():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([0.5, 0.0]))
    c = Tensor(np.array([3.0, -1.0]), requires_grad=True)
    d = Tensor(np.array([0.0, 0.0]))
    loss = latent_loss([[(a, b)], [(c, d)]])  # M = 2
    loss.backward()
    assert np.allclose(a.grad, 2 * (a.data - b.data) / 2)
    assert np.allclose(c.grad, 2 * (c.data - d.data) / 2)


def test_latent_loss_rejects_degenerate_input():
    with pytest.raises(ValueError):
        latent_loss([])
    with pytest.raises(ValueError):
        latent_loss([[]])
    with pytest.raises(T.ShapeError):
        latent_loss([[(Tensor(np.zeros(3)), Tensor(np.zeros(4)))]])


# ---- predictor ----

def test_predictor_kind_none_is_empty_and_has_no_forward():
    store = init_predictor_params(PredictorConfig(kind="none"), 8,
                                  np.random.default_rng(0))
    assert len(store) == 0
    with pytest.raises(ConfigError):
        predict(Tensor(np.zeros(8)), Tensor(np.zeros((3, 8))),
                PredictorConfig(kind="none"), store)


def test_mlp_predictor_ignores_non_cls_tokens():
    cfg = PredictorConfig(kind="mlp")
    params = init_predictor_params(cfg, 8, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    cls = Tensor(rng.standard_normal(8))
    toks1 = Tensor(rng.standard_normal((4, 8)))
    toks2 = Tensor(rng.standard_normal((4, 8)))
    out1 = predict(cls, toks1, cfg, params)
    out2 = predict(cls, toks2, cfg, params)
    assert out1.shape == (8,)
    assert np.array_equal(out1.data, out2.data)


def test_transformer_predictor_attends_to_all_tokens():
    cfg = PredictorConfig(kind="transformer", layers=1, heads=2)
    params = init_predictor_params(cfg, 8, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    cls = Tensor(rng.standard_normal(8))
    toks = rng.standard_normal((4, 8))
    out1 = predict(cls, Tensor(toks.copy()), cfg, params)
    # perturb one component of a non-CLS token (a whole-row shift would be
    # erased by the pre-norm layer norm)
    toks[3, 1] += 1.0
    out2 = predict(cls, Tensor(toks), cfg, params)
    assert not np.allclose(out1.data, out2.data)


def test_transformer_predictor_head_divisibility():
    with pytest.raises(ConfigError):
        init_predictor_params(PredictorConfig(kind="transformer", heads=3), 8,
                              np.random.default_rng(0))
    with pytest.raises(ConfigError):
        PredictorConfig(kind="conv")


# ---- optimizer ----

def test_adam_minimizes_quadratic():
    x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    store = ParamStore({"x": x})
    state = AdamState()
    for _ in range(400):
        T.reduce_sum(T.mul(x, x)).backward()
        adam_step({"m": store}, lr=0.05, weight_decay=0.0, state=state)
    assert np.abs(x.data).max() < 1e-3


def test_adam_weight_decay_is_decoupled():
    x = Tensor(np.array([2.0]), requires_grad=True)
    store = ParamStore({"x": x})
    state = AdamState()
    # zero gradient: the only movement is -lr * wd * p
    x.grad = np.zeros(1)
    adam_step({"m": store}, lr=0.1, weight_decay=0.5, state=state)
    assert x.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)
    assert x.grad is None  # grads consumed


def test_adam_skips_frozen_params():
    frozen = Tensor(np.array([1.0]), requires_grad=False)
    store = ParamStore({"x": frozen})
    frozen.grad = np.array([10.0])
    adam_step({"m": store}, lr=0.1, weight_decay=0.1, state=AdamState())
    assert frozen.data[0] == 1.0


# ---- rng derivation ----

def test_derive_rng_is_deterministic_and_keyed():
    a = derive_rng(7, "split").integers(1 << 30, size=4)
    b = derive_rng(7, "split").integers(1 << 30, size=4)
    c = derive_rng(7, "order").integers(1 << 30, size=4)
    d = derive_rng(8, "split").integers(1 << 30, size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


# ---- training step ----

def _tiny_state(seed=0, pred_kind="mlp"):
    ctx = init_encoder_params(TINY_ENC, derive_rng(seed, "enc"))
    tgt = ctx.copy(requires_grad=False)
    pred = init_predictor_params(PredictorConfig(kind=pred_kind, layers=1, heads=2),
                                 TINY_ENC.fusion_hidden, derive_rng(seed, "pred"))
    return TrainState(step=0, epoch=0, context_params=ctx, target_params=tgt,
                      predictor_params=pred, opt=AdamState(), seed=seed)


def _tiny_batch(seed=0):
    mols = random_molecules(np.random.default_rng(seed), 3, n_atoms_range=(6, 9),
                            n_conformers=0)
    batch = []
    for m in mols:
        pair = make_view_pair(m, anchor=0, k=1)
        assert pair is not None
        batch.append(pair)
    return batch


def test_pretrain_step_updates_context_and_emas_target():
    state = _tiny_state()
    batch = _tiny_batch()
    pred_cfg = PredictorConfig(kind="mlp")
    ctx_before = state.context_params.copy()
    tgt_before = state.target_params.copy()
    tau = 0.9
    loss, diag = pretrain_step(batch, state, TINY_ENC, pred_cfg, lr=1e-3,
                               tau=tau, weight_decay=0.0)
    assert math.isfinite(loss) and loss > 0
    assert diag.n_pairs == 3 and diag.embedding_std >= 0
    changed = any(not np.array_equal(state.context_params[n].data, ctx_before[n].data)
                  for n in ctx_before.names())
    assert changed
    for n in tgt_before.names():
        expect = tau * tgt_before[n].data + (1 - tau) * state.context_params[n].data
        assert np.allclose(state.target_params[n].data, expect, atol=1e-14)
    assert all(not p.requires_grad for p in state.target_params.values())
    assert state.step == 1 and len(state.diagnostics) == 1


def test_pretrain_step_overfits_one_batch():
    state = _tiny_state(seed=1)
    batch = _tiny_batch(seed=1)
    pred_cfg = PredictorConfig(kind="mlp")
    losses = []
    for _ in range(60):
        # tau=1 freezes the target so the regression problem stays fixed
        loss, _ = pretrain_step(batch, state, TINY_ENC, pred_cfg, lr=3e-3,
                                tau=1.0, weight_decay=0.0)
        losses.append(loss)
    assert losses[-1] < 0.2 * losses[0]


def test_pretrain_step_rejects_empty_batch():
    with pytest.raises(ValueError):
        pretrain_step([], _tiny_state(), TINY_ENC, PredictorConfig(kind="mlp"),
                      lr=1e-3, tau=0.99, weight_decay=0.0)


# ---- full loop ----

def _run_pretrain(tmp_path, sub, seed=0, **over):
    mols = random_molecules(np.random.default_rng(4), 8, n_atoms_range=(6, 10),
                            n_conformers=0)
    sched = ScheduleConfig(lr_start=1e-4, lr_peak=1e-3, warmup_epochs=1,
                           total_epochs=over.pop("total_epochs", 2),
                           batch_size=4, weight_decay=0.0)
    return pretrain(mols, TINY_ENC, PredictorConfig(kind="mlp"), sched,
                    ViewConfig(n_anchors=1, k_choices=(1,)), seed=seed,
                    out_dir=str(tmp_path / sub), **over)


def test_pretrain_writes_metrics_and_checkpoint(tmp_path):
    res = _run_pretrain(tmp_path, "a")
    assert len(res.history) == 2
    lines = open(res.metrics_path).read().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr,tau,embedding_std"
    assert len(lines) == 3
    stores, meta = load_checkpoint(res.checkpoint_path)
    assert set(stores) == {"context", "target", "predictor"}
    assert meta["seed"] == 0 and meta["epoch"] == res.best_epoch
    assert meta["encoder"]["mode"] == "2D-only"
    assert res.best_val_loss == pytest.approx(
        min(h["val_loss"] for h in res.history))


def test_pretrain_metrics_reproducible_bytes(tmp_path):
    res1 = _run_pretrain(tmp_path, "r1", seed=5)
    res2 = _run_pretrain(tmp_path, "r2", seed=5)
    assert open(res1.metrics_path, "rb").read() == open(res2.metrics_path, "rb").read()
    res3 = _run_pretrain(tmp_path, "r3", seed=6)
    assert open(res1.metrics_path, "rb").read() != open(res3.metrics_path, "rb").read()


def test_pretrain_patience_stops_early(tmp_path):
    res = _run_pretrain(tmp_path, "p", total_epochs=30, patience=0)
    assert len(res.history) == 1  # first epoch sets best, patience 0 halts


def test_pretrain_dumps_state_on_nonfinite_loss(tmp_path, monkeypatch):
    def bad_step(batch, state, enc_cfg, pred_cfg, lr, tau, weight_decay):
        state.step += 1
        return float("nan"), O.StepDiagnostics(loss=float("nan"),
                                               embedding_std=0.0, n_pairs=len(batch))

    monkeypatch.setattr(O, "pretrain_step", bad_step)
    with pytest.raises(FloatingPointError) as err:
        _run_pretrain(tmp_path, "dump")
    assert "state dumped" in str(err.value)
    assert (tmp_path / "dump" / "state-dump.ckpt").exists()


def test_pretrain_needs_two_molecules(tmp_path):
    mols = random_molecules(np.random.default_rng(0), 1, n_conformers=0)
    with pytest.raises(ValueError):
        pretrain(mols, TINY_ENC, PredictorConfig(kind="mlp"), ScheduleConfig(),
                 ViewConfig(), seed=0, out_dir=str(tmp_path / "x"))
