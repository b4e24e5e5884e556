"""Contrast-free multimodal self-supervised pretraining on molecular graphs.

Ego-net / complement views of a molecule are encoded by a shared
multimodal backbone (GINE for bonds, continuous-filter convolutions for
conformers, fused by a transformer without positional encodings); a
trainable context encoder plus predictor regresses onto an EMA target
encoder in latent space, with no negative pairs. Downstream heads probe
the frozen backbone or fine-tune it, and a Weisfeiler-Leman bench
measures what the ego-net decomposition buys in expressiveness.
"""

from .checkpoint import ParamStore, load_checkpoint, save_checkpoint
from .encoders import EncoderConfig, assemble, encode_2d, encode_3d, fuse
from .heads import Backbone, ProbeConfig, embed_ds, embed_whole, fit_head, mae, roc_auc
from .molgraph import (AtomFeature, Conformer, Molecule, adjacency, parse_jsonl,
                       parse_sdf_v2000, write_jsonl, write_sdf_v2000)
from .objective import (PredictorConfig, ScheduleConfig, ema_update, latent_loss,
                        predict, pretrain, pretrain_step, schedules)
from .tensor import Tensor, gradcheck
from .views import (ViewConfig, ViewPair, bench_egonet, k_ego_net, make_view_pair,
                    sample_views)
from .wlbench import gen_hard_pairs, run_separation, wl_refine

__version__ = "0.1.0"
