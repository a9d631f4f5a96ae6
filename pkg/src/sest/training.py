"""Training loop, dataset evaluation and the two ablation runners."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DivergedLoss, EmptyDataset, ShapeMismatch, UsageError
from .losses import LossWeights, combined_loss
from .metrics import MetricReport, evaluate_all, mean_reports
from .model import ModelConfig, SestModel, forward
from .synthetic import Sample
from .tensor_engine import Tape, adamw_step, backward
from .tensor_engine import optim

log = logging.getLogger(__name__)

LR = 0.006
MAX_EPOCHS = 30
EARLY_STOP_PATIENCE = 3
PLATEAU_PATIENCE = 1
PLATEAU_FACTOR = 0.1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = LR
    batch_size: int = 2
    max_epochs: int = MAX_EPOCHS
    early_stop_patience: int = EARLY_STOP_PATIENCE
    plateau_patience: int = PLATEAU_PATIENCE
    plateau_factor: float = PLATEAU_FACTOR
    seed: int = 0
    weight_decay: float = optim.WEIGHT_DECAY
    beta1: float = optim.BETA1
    beta2: float = optim.BETA2
    adam_eps: float = optim.EPS
    min_delta: float = 1e-4  # relative improvement threshold

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise UsageError("lr, batch_size and max_epochs must be positive")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise UsageError("patience values must be positive")
        if not 0 < self.plateau_factor < 1:
            raise UsageError("plateau factor must lie in (0, 1)")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    model: SestModel
    history: list[EpochRecord]
    step_losses: list[float]
    best_epoch: int
    best_val: float


class Plateau:
    """Improvement bookkeeping shared by LR reduction and early stopping."""

    def __init__(self, cfg: TrainConfig) -> None:
        self.cfg = cfg
        self.lr = cfg.lr
        self.best = math.inf
        self.bad = 0
        self.plateau_bad = 0

    def update(self, val: float) -> bool:
        """Feed one epoch's validation loss; returns True if it is a new best."""
        improved = not math.isfinite(self.best) or val < self.best - self.cfg.min_delta * abs(self.best)
        if improved:
            self.best = val
            self.bad = 0
            self.plateau_bad = 0
            return True
        self.bad += 1
        self.plateau_bad += 1
        if self.plateau_bad > self.cfg.plateau_patience:
            self.lr *= self.cfg.plateau_factor
            self.plateau_bad = 0
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad >= self.cfg.early_stop_patience


def _batch(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    bins = {s.bins for s in samples}
    if len(bins) != 1:
        raise ShapeMismatch(f"samples disagree on bin count: {sorted(bins)}")
    x = np.stack([s.model_input() for s in samples])
    y = np.stack([s.saliency for s in samples])[:, :, None]
    return x, y


def dataset_loss(model: SestModel, samples: Sequence[Sample], weights: LossWeights, batch_size: int) -> float:
    """Sample-weighted mean loss in eval mode; leaves the model's mode as found."""
    was = model.training
    model.eval()
    try:
        total = 0.0
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, y = _batch(chunk)
            total += combined_loss(forward(x, model), y, weights).item() * len(chunk)
        return total / len(samples)
    finally:
        model.train(was)


def train(
    model: SestModel,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    cfg: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Train in place and return the model restored to its best validation epoch."""
    if not train_set or not val_set:
        raise EmptyDataset("train and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    sched = Plateau(cfg)
    params = model.parameters()
    history: list[EpochRecord] = []
    steps: list[float] = []
    best_state = model.state_dict(optimizer=True)
    best_epoch = 0

    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for i in range(0, len(order), cfg.batch_size):
            x, y = _batch([train_set[j] for j in order[i:i + cfg.batch_size]])
            with Tape() as tape:
                loss = combined_loss(forward(x, model), y, weights)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergedLoss(f"loss {value} at epoch {epoch}, step {len(steps) + 1}")
            backward(tape, loss, params)
            adamw_step(params, sched.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
            steps.append(value)
            epoch_losses.append(value)

        val = dataset_loss(model, val_set, weights, cfg.batch_size)
        if not math.isfinite(val):
            raise DivergedLoss(f"validation loss {val} at epoch {epoch}")
        if sched.update(val):
            best_state = model.state_dict(optimizer=True)
            best_epoch = epoch
        rec = EpochRecord(epoch, float(np.mean(epoch_losses)), val, sched.lr)
        history.append(rec)
        log.info("epoch %d train %.6f val %.6f lr %.3g", epoch, rec.train_loss, val, sched.lr)
        if on_epoch:
            on_epoch(rec)
        if sched.should_stop:
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, steps, best_epoch, sched.best)


Predictor = Union[SestModel, Callable[[Sample], np.ndarray]]


def predict(model: SestModel, sample: Sample) -> np.ndarray:
    """[T, H, W] saliency maps for one sample, eval mode."""
    was = model.training
    model.eval()
    try:
        return forward(sample.model_input()[None], model).data[0, :, 0]
    finally:
        model.train(was)


@dataclass
class EvalResult:
    report: MetricReport
    counts: dict[str, int]
    per_sample: list[MetricReport]
    per_bin: list[list[MetricReport]] = field(default_factory=list)


def evaluate(model: Predictor, dataset: Sequence[Sample]) -> EvalResult:
    """Metrics per bin, averaged over bins and then over samples.

    Unavailable metrics are left out of each average; ``counts`` says how many
    samples contributed to each final figure.
    """
    if not dataset:
        raise EmptyDataset("nothing to evaluate")
    fn = (lambda s: predict(model, s)) if isinstance(model, SestModel) else model
    per_sample, per_bin = [], []
    for s in dataset:
        maps = np.asarray(fn(s))
        if maps.shape != s.saliency.shape:
            raise ShapeMismatch(f"prediction {maps.shape} vs ground truth {s.saliency.shape}")
        bins = [evaluate_all(maps[b], s.saliency[b], s.fixations[b]) for b in range(s.bins)]
        per_bin.append(bins)
        per_sample.append(mean_reports(bins)[0])
    report, counts = mean_reports(per_sample)
    return EvalResult(report, counts, per_sample, per_bin)


ABLATIONS = ("no_center_bias", "conv2d_decoder")


def ablation_config(kind: str, base: ModelConfig) -> ModelConfig:
    if kind == "no_center_bias":
        return replace(base, center_bias=False)
    if kind == "conv2d_decoder":
        return replace(base, decoder="conv2d")
    raise UsageError(f"unknown ablation {kind!r}; choose from {ABLATIONS}")


@dataclass
class AblationResult:
    kind: str
    baseline: EvalResult
    variant: EvalResult
    baseline_train: TrainResult
    variant_train: TrainResult

    @property
    def deltas(self) -> dict[str, Optional[float]]:
        """variant minus baseline, per metric."""
        out = {}
        for k in MetricReport.FIELDS:
            a, b = getattr(self.baseline.report, k), getattr(self.variant.report, k)
            out[k] = None if a is None or b is None else b - a
        return out


def run_ablation(
    kind: str,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    eval_set: Optional[Sequence[Sample]] = None,
    weights: LossWeights = LossWeights(),
) -> AblationResult:
    """Train the baseline and the ablated variant under identical seeds and data."""
    variant_cfg = ablation_config(kind, model_cfg)
    eval_set = val_set if eval_set is None else eval_set
    runs = []
    for cfg in (model_cfg, variant_cfg):
        res = train(SestModel(cfg, seed=train_cfg.seed), train_set, val_set, train_cfg, weights)
        runs.append((res, evaluate(res.model, eval_set)))
    (bt, be), (vt, ve) = runs
    return AblationResult(kind, be, ve, bt, vt)


GRADCHECK_FLOOR = 1e-5


@dataclass
class GradCheckResult:
    max_error: float
    per_param: dict[str, float]
    loss: float


def model_grad_check(
    model_cfg: ModelConfig,
    samples: Sequence[Sample],
    h: float = 1e-5,
    per_param: Optional[int] = 2,
    seed: int = 0,
    jitter: float = 0.05,
    weights: LossWeights = LossWeights(),
    floor: float = GRADCHECK_FLOOR,
) -> GradCheckResult:
    """Finite-difference check of the combined loss through the whole model.

    A fresh model has every bias at zero, so regions without events give
    pre-activations that are exactly zero and sit on the leaky-ReLU kink,
    where no finite difference agrees with either one-sided derivative. The
    parameters are therefore nudged by ``jitter``-scaled Gaussian noise first,
    which moves the check to a generic, differentiable point. The key bias
    of every attention layer has an exactly zero gradient (softmax ignores a
    per-query shift), so ``floor`` sets the denominator below which errors are
    effectively absolute. Batch
    statistics are used but the running buffers are left untouched.
    """
    from .tensor_engine import grad_check_params

    rng = np.random.default_rng(seed)
    model = SestModel(model_cfg, seed=seed)
    for p in model.parameters():
        p.data += jitter * rng.standard_normal(p.data.shape)
    x, y = _batch(samples)
    fn = lambda: combined_loss(forward(x, model, update_stats=False), y, weights)  # noqa: E731
    worst, report = grad_check_params(fn, model.parameters(), h, per_param, rng, floor)
    return GradCheckResult(worst, report, fn().item())
