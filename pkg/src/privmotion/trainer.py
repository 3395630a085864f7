"""Two-stage training: ITP first, then FP against the frozen privileged encoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as tc
from .config import TrainConfig, train_config_from, train_config_items
from .dct import DctBasis, idct_node
from .errors import CheckpointError, ConfigError, ContractError
from .gcn import Mode
from .losses import loss_fp, loss_itp, loss_psl, loss_simu, loss_total
from .networks import NetSpec, fp_forward, itp_forward, priv_representation, spec_from_store, warm_start_fp
from .preprocess import EncodedBatch, MotionWindow, encode_windows

log = logging.getLogger(__name__)

STAGES = ("ITP", "FP", "TP", "PSL")
STAGE_KIND = {"ITP": "itp", "FP": "fp", "TP": "fp", "PSL": "psl"}
# TP shares FP's tag: a TP run is an FP run with the distillation term switched off
_STREAM_TAG = {"ITP": 11, "FP": 12, "TP": 12, "PSL": 13}


@dataclass
class StageArtifacts:
    params: tc.ParamStore
    stage: str
    config: TrainConfig
    loss_curve: list[float] = field(default_factory=list)
    simu_curve: list[float] = field(default_factory=list)
    step_lrs: list[float] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return STAGE_KIND[self.stage]

    def spec(self) -> NetSpec:
        return spec_from_store(self.kind, self.params)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: lr0 * decay ** floor(epoch / decay_every)."""
    if epoch < 0:
        raise ContractError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr0 * cfg.decay ** (epoch // cfg.decay_every)


def _check_windows(windows: Sequence[MotionWindow], cfg: TrainConfig) -> None:
    if not windows:
        raise ConfigError("the training set is empty")
    w = windows[0]
    if (w.n, w.t, w.p) != (cfg.n, cfg.t, cfg.p):
        raise ConfigError(f"windows are {w.n}-{w.t}-{w.p} but the config asks for {cfg.n}-{cfg.t}-{cfg.p}")


def _streams(cfg: TrainConfig, stage: str) -> tuple[np.random.Generator, np.random.Generator]:
    tag = _STREAM_TAG[stage]
    return np.random.default_rng([cfg.seed, tag, 1]), np.random.default_rng([cfg.seed, tag, 2])


def _run_epochs(data: EncodedBatch, epochs: int, cfg: TrainConfig, stage: str, params: tc.ParamStore,
                step_fn: Callable, on_epoch: Callable | None = None) -> StageArtifacts:
    """Shared loop: seeded reshuffle per epoch, last short batch kept, Adam per batch.

    ``step_fn(graph, idx, mode)`` builds the loss for the batch ``idx`` and
    returns ``(loss_node, simu_value_or_None)``.
    """
    art = StageArtifacts(params, stage, cfg)
    shuffle_rng, dropout_rng = _streams(cfg, stage)
    count = len(data)
    for epoch in range(epochs):
        lr = lr_at(epoch, cfg)
        mode = Mode(True, cfg.dropout, dropout_rng)
        order = shuffle_rng.permutation(count)
        total = simu_total = 0.0
        for start in range(0, count, cfg.batch):
            idx = order[start:start + cfg.batch]
            graph = tc.Graph()
            loss, simu = step_fn(graph, idx, mode)
            grads = tc.backward(graph, loss)
            tc.adam_step(params, grads, lr, cfg.clip_norm)
            art.step_lrs.append(lr)
            total += float(loss.value) * len(idx)
            if simu is not None:
                simu_total += simu * len(idx)
        art.loss_curve.append(total / count)
        if stage in ("FP", "TP"):
            art.simu_curve.append(simu_total / count)
        log.debug("%s epoch %d lr %.3g loss %.6g", stage, epoch, lr, art.loss_curve[-1])
        if on_epoch is not None:
            on_epoch(epoch, art)
    return art


def train_itp(windows: Sequence[MotionWindow], cfg: TrainConfig, on_epoch=None) -> StageArtifacts:
    if cfg.p < 1:
        raise ConfigError("ITP requires privileged poses (p >= 1)")
    _check_windows(windows, cfg)
    data = encode_windows(list(windows), cfg.coeffs)
    spec = NetSpec.from_config("itp", cfg, windows[0].k)
    params = spec.init(cfg.seed)
    basis = DctBasis.create(cfg.length, cfg.coeffs)

    def step(graph, idx, mode):
        h_itp, _ = itp_forward(graph.const(data.h_obs[idx]), graph.const(data.h_priv[idx]), params, spec, mode,
                               cfg.obs_skip, cfg.priv_skip)
        return loss_itp(idct_node(h_itp, basis), data.truth[idx], cfg.metric), None

    return _run_epochs(data, cfg.epochs_itp, cfg, "ITP", params, step, on_epoch)


def train_fp(windows: Sequence[MotionWindow], itp: tc.ParamStore | None, cfg: TrainConfig,
             on_epoch=None) -> StageArtifacts:
    """Train FP; with ``itp=None`` (allowed only for lambda=0 or p=0) this is TP training.

    ``itp`` is only read: E is computed once per window by its privileged
    encoder in eval mode and enters the FP graph as a constant.
    """
    _check_windows(windows, cfg)
    k = windows[0].k
    spec = NetSpec.from_config("fp", cfg, k)
    distill = itp is not None and cfg.p > 0 and cfg.lam > 0
    if itp is None and cfg.p > 0 and cfg.lam > 0:
        raise ConfigError("FP training with lambda > 0 needs a trained ITP network")
    data = encode_windows(list(windows), cfg.coeffs)
    targets = None
    if distill:
        itp_spec = spec_from_store("itp", itp)
        if (itp_spec.k, itp_spec.coeffs, itp_spec.hidden) != (spec.k, spec.coeffs, spec.hidden):
            raise ConfigError(f"ITP network (K={itp_spec.k}, C={itp_spec.coeffs}, hidden={itp_spec.hidden}) "
                              f"does not match the FP config (K={spec.k}, C={spec.coeffs}, hidden={spec.hidden})")
        targets = priv_representation(data.h_priv, itp, itp_spec)
    params = spec.init(cfg.seed)
    if cfg.warm_start and itp is not None:
        warm_start_fp(params, itp)
    basis = DctBasis.create(cfg.length, cfg.coeffs)
    scored = cfg.n + cfg.t

    def step(graph, idx, mode):
        h_fp, s = fp_forward(graph.const(data.h_obs[idx]), params, spec, mode, cfg.fp_skip)
        pred = loss_fp(idct_node(h_fp, basis), data.truth[idx][..., :scored], cfg.metric)
        if targets is None:
            return pred, None
        simu = loss_simu(s, targets[idx])
        return loss_total(pred, simu, cfg.lam), float(simu.value)

    return _run_epochs(data, cfg.epochs_fp, cfg, "FP" if distill else "TP", params, step, on_epoch)


def train_tp(windows: Sequence[MotionWindow], cfg: TrainConfig, on_epoch=None) -> StageArtifacts:
    """Traditional prediction: the FP network without a distillation target."""
    return train_fp(windows, None, cfg.replace(lam=0.0), on_epoch)


def train_psl(windows: Sequence[MotionWindow], cfg: TrainConfig, psl_weight: float,
              on_epoch=None) -> StageArtifacts:
    """Single network predicting all N+T+P frames, privileged frames scored with ``psl_weight``."""
    if cfg.p < 1:
        raise ConfigError("PSL training requires privileged poses (p >= 1)")
    if psl_weight < 0:
        raise ConfigError(f"psl_weight must be non-negative, got {psl_weight}")
    _check_windows(windows, cfg)
    data = encode_windows(list(windows), cfg.coeffs)
    spec = NetSpec.from_config("psl", cfg, windows[0].k)
    params = spec.init(cfg.seed)
    basis = DctBasis.create(cfg.length, cfg.coeffs)

    def step(graph, idx, mode):
        h, _ = fp_forward(graph.const(data.h_obs[idx]), params, spec, mode, cfg.fp_skip)
        return loss_psl(idct_node(h, basis), data.truth[idx], cfg.n + cfg.t, psl_weight, cfg.metric), None

    return _run_epochs(data, cfg.epochs_fp, cfg, "PSL", params, step, on_epoch)


# --------------------------------------------------------------- checkpoints

def save_stage(path, art: StageArtifacts, extra: dict | None = None) -> Path:
    meta = {f"config.{k}": v for k, v in train_config_items(art.config).items()}
    meta.update(stage=art.stage, seed=art.config.seed, epoch=len(art.loss_curve))
    meta.update(extra or {})
    return tc.save_params(path, art.params, meta)


def load_stage(path, expect: str | Sequence[str] | None = None) -> StageArtifacts:
    """Load a stage checkpoint, checking its stage and parameter schema.

    Raises FormatError for a damaged container and CheckpointError when the
    contents belong to a different stage or network.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    store, meta = tc.load_params(path)
    stage = meta.get("stage")
    if stage not in STAGES:
        raise CheckpointError(f"{path}: unknown stage {stage!r}")
    expected = [expect] if isinstance(expect, str) else list(expect or [])
    kind = STAGE_KIND[stage]
    if expected and stage not in expected:
        wanted = sorted({STAGE_KIND[s] for s in expected})
        raise CheckpointError(
            f"{path}: holds {stage} parameters (e.g. {store.names()[0]!r}) but "
            f"{' or '.join(expected)} parameters are required (e.g. '{wanted[0]}.obs.layer_in.A')")
    spec_from_store(kind, store)
    cfg_items = {k[len("config."):]: v for k, v in meta.items() if k.startswith("config.")}
    try:
        cfg = train_config_from(cfg_items)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: bad embedded config: {exc}") from None
    return StageArtifacts(store, stage, cfg)
