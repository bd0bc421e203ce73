"""Huber/Adam training loop with early stopping and leave-one-out runs.

Everything is seeded: parameter init, batch shuffling and augmentation all
derive from the configured seed, so a run is bit-reproducible at 64-bit.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .augment import AugmentConfig, AugmentPipeline
from .autodiff import Tape, Tensor
from .autodiff.ops import absolute, add, maximum_scalar, mean, mul, neg, sub
from .data import fit_normalizer, get_profile, make_loocv_splits, make_windows
from .errors import (ConfigurationError, DataError, DimensionError,
                     TrainingDivergedError)
from .evaluate import EvalReport, aggregate_metrics, evaluate_battery
from .model import ModelConfig, build_variant

# Training hyperparameters preloaded by --profile (everything else shares
# the TrainConfig defaults).
PROFILE_TRAINING = {
    "nasa": {"lr": 5e-4, "max_epochs": 200},
    "calce": {"lr": 1e-3, "max_epochs": 500},
    "synthetic": {"lr": 1e-3, "max_epochs": 60},
}


@dataclass
class TrainConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 15
    huber_delta: float = 1.0
    seed: int = 0
    augment: Optional[AugmentConfig] = None
    profile: str = "custom"
    val_fraction: float = 0.2   # chronological tail of each training battery

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigurationError(f"{name} must be in (0, 1), got {value}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigurationError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.huber_delta <= 0:
            raise ConfigurationError(f"huber_delta must be > 0, got {self.huber_delta}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigurationError(
                f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.augment is not None:
            self.augment.validate()


def derive_seed(*parts) -> int:
    """Stable sub-seed from arbitrary parts (ints and strings)."""
    entropy = []
    for part in parts:
        if isinstance(part, (int, np.integer)):
            entropy.append(int(part) & 0xFFFFFFFF)
        else:
            digest = hashlib.sha256(str(part).encode()).digest()
            entropy.append(int.from_bytes(digest[:4], "little"))
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def huber_loss(pred: Tensor, target: Tensor, delta: float) -> Tensor:
    """Mean Huber loss: quadratic within delta of zero error, linear beyond.

    Written as 0.5*m^2 + delta*(|e| - m) with m = min(|e|, delta), which is
    the branch form with a gradient that is continuous at |e| = delta.
    """
    if delta <= 0:
        raise ConfigurationError(f"huber delta must be > 0, got {delta}")
    if pred.shape != target.shape:
        raise DimensionError(
            f"huber_loss: prediction shape {pred.shape} vs target shape {target.shape}")
    error = sub(pred, target)
    magnitude = absolute(error)
    clipped = neg(maximum_scalar(neg(magnitude), -delta))   # min(|e|, delta)
    quadratic = mul(mul(clipped, clipped), Tensor(np.array(0.5)))
    linear = mul(sub(magnitude, clipped), Tensor(np.array(float(delta))))
    return mean(add(quadratic, linear))


class Adam:
    """Bias-corrected Adam with classic L2 (decay added to the gradient)."""

    def __init__(self, named_params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, weight_decay: float = 0.0, eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(f"non-finite gradient for parameter '{name}'")
            if self.weight_decay:
                grad = grad + self.weight_decay * p.data
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * grad
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * grad * grad
            p.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_early: bool = False
    diverged: bool = False


def _snapshot(model):
    return ([(n, t.data.copy()) for n, t in model.named_parameters()],
            [(n, a.copy()) for n, a in model.named_buffers()])


def _restore(model, snapshot) -> None:
    params, buffers = snapshot
    live_params = dict(model.named_parameters())
    live_buffers = dict(model.named_buffers())
    for name, data in params:
        live_params[name].data = data.copy()
    for name, data in buffers:
        live_buffers[name][...] = data


def _stack(samples):
    x = np.stack([s.features for s in samples])
    y = np.array([s.target for s in samples])
    return x, y


def _eval_loss(model, x, y, delta) -> float:
    pred = model.predict(x)
    return huber_loss(Tensor(pred), Tensor(y), delta).item()


def train_split(model, train_samples, val_samples, cfg: TrainConfig) -> TrainResult:
    """Train one model, returning it at its best-validation checkpoint.

    Augmentation (when configured) touches training inputs only; validation
    and evaluation inputs are never augmented. When no validation samples
    exist, the training loss is monitored instead.
    """
    cfg.validate()
    if not train_samples:
        raise DataError("train_split needs a nonempty training set")
    x_train, y_train = _stack(train_samples)
    have_val = len(val_samples) > 0
    if have_val:
        x_val, y_val = _stack(val_samples)
    pipeline = AugmentPipeline(cfg.augment) if cfg.augment is not None else None
    optimizer = Adam(model.named_parameters(), lr=cfg.lr, beta1=cfg.beta1,
                     beta2=cfg.beta2, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    result = TrainResult()
    best = _snapshot(model)
    epochs_since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        model.set_training(True)
        order = shuffle_rng.permutation(len(train_samples))
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = x_train[idx]
            if pipeline is not None:
                xb = np.stack([pipeline.augment(sample.T).values.T for sample in xb])
            try:
                with Tape() as tape:
                    pred = model.forward(Tensor(xb))
                    loss = huber_loss(pred, Tensor(y_train[idx]), cfg.huber_delta)
                    if not math.isfinite(loss.item()):
                        raise TrainingDivergedError("training loss is not finite")
                    tape.backward(loss)
                optimizer.step()
            except TrainingDivergedError:
                model.set_training(False)
                _restore(model, best)
                result.diverged = True
                return result
            finally:
                optimizer.zero_grad()
            batch_losses.append(loss.item())
        model.set_training(False)
        train_loss = float(np.mean(batch_losses))
        val_loss = _eval_loss(model, x_val, y_val, cfg.huber_delta) if have_val else train_loss
        result.history.append((epoch, train_loss, val_loss))
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best = _snapshot(model)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                result.stopped_early = True
                break
    _restore(model, best)
    model.set_training(False)
    return result


@dataclass
class SplitOutcome:
    battery_id: str
    model: object = None
    normalizer: object = None
    train_result: Optional[TrainResult] = None
    report: Optional[EvalReport] = None
    error: Optional[str] = None


@dataclass
class LoocvResult:
    outcomes: list
    aggregate: dict

    @property
    def reports(self):
        return [o.report for o in self.outcomes if o.report is not None]


def _tail_split(samples, val_fraction: float):
    if val_fraction == 0:
        return samples, []
    n_val = max(1, int(math.floor(len(samples) * val_fraction)))
    return samples[:-n_val], samples[-n_val:]


def run_loocv(batteries, model_cfg: ModelConfig, train_cfg: TrainConfig,
              mode: str = "one_step", parallel: int = 1) -> LoocvResult:
    """Leave-one-battery-out: fit the normalizer and a fresh model per
    split, evaluate on the held-out battery, average the metrics.

    A failing split is recorded and does not abort the others.
    """
    train_cfg.validate()
    splits = make_loocv_splits(batteries)
    feature_names = get_profile(batteries[0].profile).features

    def run_one(index: int) -> SplitOutcome:
        train_batteries, test_battery = splits[index]
        outcome = SplitOutcome(battery_id=test_battery.battery_id)
        try:
            normalizer = fit_normalizer(train_batteries, feature_names)
            train_samples, val_samples = [], []
            for battery in train_batteries:
                windows = make_windows(battery, model_cfg.window_len,
                                       normalizer, feature_names)
                head, tail = _tail_split(windows, train_cfg.val_fraction)
                train_samples.extend(head)
                val_samples.extend(tail)
            split_seed = derive_seed(train_cfg.seed, index)
            split_cfg = replace(train_cfg, seed=split_seed)
            if train_cfg.augment is not None:
                split_cfg = replace(
                    split_cfg,
                    augment=replace(train_cfg.augment,
                                    seed=derive_seed(split_seed, "augment")))
            model = build_variant(model_cfg, seed=derive_seed(split_seed, "init"))
            outcome.train_result = train_split(model, train_samples, val_samples, split_cfg)
            outcome.model = model
            outcome.normalizer = normalizer
            outcome.report = evaluate_battery(model, test_battery, normalizer,
                                              feature_names, model_cfg.window_len, mode)
        except Exception as exc:  # keep the other splits running
            outcome.error = f"{type(exc).__name__}: {exc}"
        return outcome

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            outcomes = list(pool.map(run_one, range(len(splits))))
    else:
        outcomes = [run_one(i) for i in range(len(splits))]
    reports = [o.report for o in outcomes if o.report is not None]
    aggregate = aggregate_metrics(reports) if reports else {}
    return LoocvResult(outcomes=outcomes, aggregate=aggregate)
