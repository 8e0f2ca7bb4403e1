"""End-to-end training loop, its config file and loss trace."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError
from .data import Augmentation, SyntheticDataset, load_clip_tree, make_training_sample
from .losses import (FeatureExtractor, LossWeights, identity_features, perceptual_loss, reconstruction_loss,
                     smoothness_loss, total_loss, warping_loss)
from .model import ForwardOutput, Interpolator
from .optim import AdamState, adam_step, lr_schedule

log = logging.getLogger(__name__)

TRACE_HEADER = ["epoch", "iteration", "lr", "lr_term", "lp_term", "lw_term", "ls_term", "total"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-4
    lr_decay: float = 10.0
    decay_every: int = 200
    batch_size: int = 1
    n_inter: int = 7
    crop_size: int = 352
    resize_shorter: int = 360
    flip: bool = True
    reverse: bool = True
    seed: int = 0
    width_factor: float = 1.0
    cross_link: bool = True
    lambda_r: float = 0.8
    lambda_p: float = 0.005
    lambda_w: float = 0.4
    lambda_s: float = 1.0
    max_iterations: int = 0          # 0: no cap
    checkpoint_every: int = 0        # epochs; 0: only the final checkpoint
    clip_length: int = 12
    # synthetic data
    synthetic: bool = False
    scene_size: int = 64
    n_scenes: int = 100
    max_speed: float = 3.0
    n_objects: int = 0
    # paths
    data_dir: str = ""
    out_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_inter < 1:
            raise ContractError("n_inter must be >= 1")
        for name in ("epochs", "batch_size", "decay_every", "clip_length", "scene_size", "n_scenes"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.lr <= 0 or self.width_factor <= 0 or self.lr_decay <= 0:
            raise ContractError("lr, lr_decay and width_factor must be positive")
        if self.crop_size < 0 or self.resize_shorter < 0 or self.max_iterations < 0:
            raise ContractError("crop_size, resize_shorter and max_iterations must be >= 0")
        if self.crop_size and self.resize_shorter and self.crop_size > self.resize_shorter:
            raise ContractError(f"crop_size {self.crop_size} exceeds resize_shorter {self.resize_shorter}")
        self.weights  # validates sign

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_r, self.lambda_p, self.lambda_w, self.lambda_s)

    @property
    def augmentation(self) -> Augmentation:
        return Augmentation(self.crop_size or None, self.resize_shorter or None, self.flip, self.reverse)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format_value(v)}\n" for k, v in asdict(self).items())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return type(default)(raw)


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) over ``base``."""
    base = base or TrainConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(TrainConfig)}
    values = dict(defaults)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ValueError(f"unknown key {key!r} (line {lineno})")
        try:
            values[key] = _parse_value(raw, defaults[key])
        except ValueError as exc:
            raise ValueError(f"bad value for {key!r}: {exc}") from None
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


# -- loss assembly ----------------------------------------------------------

def loss_terms(model: Interpolator, i0, i1, targets: Sequence, ts: Sequence[float],
               fx: FeatureExtractor = identity_features) -> tuple[dict, ForwardOutput]:
    """Run the pipeline and compute the four loss terms for one batch.

    ``targets[k]`` is the ground-truth frame at ``ts[k]``; all arrays are
    ``(B, 3, H, W)``.
    """
    i0, i1 = ad.as_node(i0), ad.as_node(i1)
    targets = [ad.as_node(t) for t in targets]
    out = model.forward(i0, i1, ts)
    terms = {
        "reconstruction": reconstruction_loss(out.frames, targets),
        "perceptual": perceptual_loss(out.frames, targets, fx),
        "warping": warping_loss(i0, i1, targets, out.f01, out.f10, [(s.ft0_hat, s.ft1_hat) for s in out.steps]),
        "smoothness": smoothness_loss(out.f01, out.f10),
    }
    return terms, out


def _first_nonfinite(model: Interpolator, out: ForwardOutput | None, terms: dict) -> str:
    for name, node in model.parameters().items():
        if not np.all(np.isfinite(node.value)):
            return name
    if out is not None:
        for name, node in (("F_0->1", out.f01), ("F_1->0", out.f10)):
            if not np.all(np.isfinite(node.value)):
                return name
        for s in out.steps:
            for attr in ("ft0_hat", "ft1_hat", "ft0", "ft1", "v0", "frame"):
                if not np.all(np.isfinite(getattr(s, attr).value)):
                    return f"{attr}(t={s.t:g})"
    for name, node in terms.items():
        if not np.all(np.isfinite(node.value)):
            return f"{name} loss"
    return "total loss"


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    trace: list[dict] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)
    checkpoint: Path | None = None

    @property
    def losses(self) -> list[float]:
        return [r["total"] for r in self.trace]


def build_dataset(cfg: TrainConfig):
    if cfg.synthetic:
        return SyntheticDataset(cfg.n_scenes, cfg.n_inter + 2, cfg.scene_size, cfg.max_speed,
                                cfg.n_objects, seed=cfg.seed)
    if not cfg.data_dir:
        raise ContractError("set data_dir or synthetic = true")
    clips = load_clip_tree(cfg.data_dir, cfg.clip_length)
    if not clips:
        raise ContractError(f"no clips of {cfg.clip_length} frames under {cfg.data_dir}")
    return clips


def write_trace(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow([r["epoch"], r["iteration"]] + [repr(float(r[k])) for k in TRACE_HEADER[2:]])


def train(model: Interpolator, dataset, cfg: TrainConfig, out_dir=None,
          fx: FeatureExtractor = identity_features) -> TrainResult:
    """Train ``model`` in place with Adam; returns the per-iteration loss trace.

    Deterministic for a given ``cfg.seed``.  With ``out_dir`` set, writes
    ``loss_trace.csv``, ``model.ckpt`` and periodic ``epoch_XXXX.ckpt`` files.
    """
    if len(dataset) < cfg.batch_size:
        raise ContractError(f"dataset has {len(dataset)} clips, fewer than one batch of {cfg.batch_size}")
    out_dir = Path(out_dir) if out_dir else (Path(cfg.out_dir) if cfg.out_dir else None)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdamState()
    weights = cfg.weights
    aug = cfg.augmentation
    result = TrainResult()
    n_batches = len(dataset) // cfg.batch_size
    iteration = 0
    done = False
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay, cfg.decay_every)
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            samples = [make_training_sample(dataset[int(j)], rng, cfg.n_inter, aug) for j in idx]
            i0 = np.stack([s.i0 for s in samples])
            i1 = np.stack([s.i1 for s in samples])
            targets = [np.stack([s.targets[k] for s in samples]) for k in range(cfg.n_inter)]
            try:
                terms, out = loss_terms(model, i0, i1, targets, samples[0].ts, fx)
            except ContractError as exc:
                if "non-finite" not in str(exc):
                    raise
                raise TrainingDiverged(f"iteration {iteration + 1}: {exc}; "
                                       f"first non-finite tensor: {_first_nonfinite(model, None, {})}") from None
            loss = total_loss(terms, weights)
            if not math.isfinite(float(loss.value)):
                raise TrainingDiverged(f"iteration {iteration + 1}: loss is not finite; "
                                       f"first non-finite tensor: {_first_nonfinite(model, out, terms)}")
            model.zero_grad()
            ad.backward(loss)
            grads = {k: n.grad for k, n in params.items()}
            for k, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise TrainingDiverged(f"iteration {iteration + 1}: non-finite gradient for {k}")
            adam_step(params, grads, state, lr)
            iteration += 1
            row = {"epoch": epoch, "iteration": iteration, "lr": lr,
                   "lr_term": float(terms["reconstruction"].value), "lp_term": float(terms["perceptual"].value),
                   "lw_term": float(terms["warping"].value), "ls_term": float(terms["smoothness"].value),
                   "total": float(loss.value)}
            result.trace.append(row)
            epoch_losses.append(row["total"])
            if iteration % 25 == 0:
                log.info("epoch %d iter %d loss %.4f", epoch, iteration, row["total"])
            if cfg.max_iterations and iteration >= cfg.max_iterations:
                done = True
                break
        result.epoch_means.append(float(np.mean(epoch_losses)) if epoch_losses else math.nan)
        if out_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            model.save(out_dir / f"epoch_{epoch + 1:04d}.ckpt")
        if done:
            break
    if out_dir:
        result.checkpoint = out_dir / "model.ckpt"
        model.save(result.checkpoint)
        write_trace(result.trace, out_dir / "loss_trace.csv")
    return result


def smoke_config(**overrides) -> TrainConfig:
    """Desk-scale settings: quarter-width nets on 64x64 synthetic scenes."""
    # 4 epochs of 75 batches of 4; the iteration cap ends the run at 300
    base = dict(epochs=4, lr=1e-3, batch_size=4, n_inter=7, crop_size=0, resize_shorter=0, width_factor=0.25,
                synthetic=True, scene_size=64, n_scenes=300, max_speed=3.0, n_objects=0,
                max_iterations=300, seed=0)
    base.update(overrides)
    return TrainConfig(**base)
