"""Loss functions and the supervised / adversarial training loops."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .dataset import ScalingMode, SequenceSample, iterate_batches, stack_batch
from .engine import NumericalError, Tensor, clip_weights, no_grad, rmsprop_step, zero_grads
from .models import AdversarialForecaster, Forecaster

logger = logging.getLogger(__name__)


class TrainingDiverged(NumericalError):
    """A loss or update became non-finite; the message names epoch and batch."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.00005
    epochs: int = 1500
    batch_size: int = 8
    seed: int = 0
    lambda_l1: float = 100.0
    n_critic: int = 5
    clip_c: float = 0.01
    optimizer: str = "rmsprop"
    rho: float = 0.9
    eps: float = 1e-8

    def validate(self) -> list[str]:
        """Names and reasons of every violated field (empty when valid)."""
        problems = []
        if not self.learning_rate > 0:
            problems.append("learning_rate: must be > 0")
        if self.epochs < 0:
            problems.append("epochs: must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size: must be >= 1")
        if self.lambda_l1 < 0:
            problems.append("lambda_l1: must be >= 0")
        if self.n_critic < 1:
            problems.append("n_critic: must be >= 1")
        if not self.clip_c > 0:
            problems.append("clip_c: must be > 0")
        if self.optimizer != "rmsprop":
            problems.append("optimizer: only 'rmsprop' is supported")
        if not 0 < self.rho < 1:
            problems.append("rho: must lie in (0, 1)")
        if self.eps < 0:
            problems.append("eps: must be >= 0")
        return problems

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    g_loss: float
    d_loss: float | None
    l1: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f.name for f in fields(EpochRecord)])
        for r in self.records:
            writer.writerow(
                [r.epoch, repr(r.g_loss), "" if r.d_loss is None else repr(r.d_loss), repr(r.l1), f"{r.seconds:.3f}"]
            )
        return buf.getvalue()

    def losses(self) -> list[tuple]:
        """Everything except wall-clock time, for reproducibility comparisons."""
        return [(r.epoch, r.g_loss, r.d_loss, r.l1) for r in self.records]


# -- losses -----------------------------------------------------------------


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def l1_loss(pred, truth) -> Tensor:
    """Mean absolute elementwise difference."""
    return (_t(pred) - _t(truth)).abs().mean()


def mse_loss(pred, truth) -> Tensor:
    """Mean squared elementwise difference."""
    return (_t(pred) - _t(truth)).square().mean()


def critic_loss(real_scores, fake_scores) -> Tensor:
    """Wasserstein critic objective, minimised by the critic: mean(fake) - mean(real)."""
    return _t(fake_scores).mean() - _t(real_scores).mean()


def generator_loss(fake_scores, pred, truth, lambda_l1: float) -> Tensor:
    """-mean(fake scores) + lambda_l1 * L1(pred, truth)."""
    adversarial = -_t(fake_scores).mean()
    if lambda_l1 == 0:
        return adversarial
    return adversarial + l1_loss(pred, truth) * lambda_l1


# -- loops ------------------------------------------------------------------


def _step_all(params, cfg: TrainConfig) -> None:
    for p in params:
        rmsprop_step(p, cfg.learning_rate, cfg.rho, cfg.eps)


def _require_valid(cfg: TrainConfig) -> None:
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid training config: " + "; ".join(problems))


EpochCallback = Callable[[int, Forecaster], None]


def train_supervised(
    model: Forecaster,
    train: Sequence[SequenceSample],
    cfg: TrainConfig,
    on_epoch: EpochCallback | None = None,
) -> TrainHistory:
    """Minimise MSE with RMSProp over seeded shuffled batches. Samples must already use ``model.mode``."""
    _require_valid(cfg)
    if not train:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        losses, l1s = [], []
        for b, batch in enumerate(iterate_batches(train, cfg.batch_size, rng), start=1):
            inputs, labels = stack_batch(batch)
            try:
                pred = model(Tensor(inputs))
                loss = mse_loss(pred, labels)
                loss.backward()
                _step_all(params, cfg)
            except NumericalError as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from exc
            losses.append(loss.item())
            l1s.append(float(np.abs(pred.data - labels).mean()))
        history.records.append(
            EpochRecord(epoch, float(np.mean(losses)), None, float(np.mean(l1s)), time.perf_counter() - started)
        )
        if on_epoch is not None:
            on_epoch(epoch, model)
    return history


def critic_step(gan: AdversarialForecaster, real: np.ndarray, fake: np.ndarray, cfg: TrainConfig) -> float:
    """One critic update on fixed real/fake heatmaps, followed by weight clipping."""
    critic_params = gan.critic_parameters()
    loss = critic_loss(gan.critic(Tensor(real)), gan.critic(Tensor(fake)))
    loss.backward()
    _step_all(critic_params, cfg)
    clip_weights(critic_params, cfg.clip_c)
    return loss.item()


def generator_step(
    gan: AdversarialForecaster, inputs: np.ndarray, labels: np.ndarray, cfg: TrainConfig
) -> tuple[float, float, float]:
    """One generator update on the joint loss; returns ``(loss, mean fake score, l1)``.

    Critic gradients produced by the backward pass are discarded, the critic is untouched.
    """
    pred = gan(Tensor(inputs))
    scores = gan.critic(pred)
    loss = generator_loss(scores, pred, labels, cfg.lambda_l1)
    loss.backward()
    zero_grads(gan.critic_parameters())
    _step_all(gan.generator_parameters(), cfg)
    return loss.item(), float(scores.data.mean()), float(np.abs(pred.data - labels).mean())


def train_gan(
    gan: AdversarialForecaster,
    train: Sequence[SequenceSample],
    cfg: TrainConfig,
    on_epoch: EpochCallback | None = None,
) -> TrainHistory:
    """Wasserstein training: per batch, ``n_critic`` clipped critic steps then one generator step."""
    _require_valid(cfg)
    if gan.mode is not ScalingMode.SYMMETRIC:
        raise ValueError("adversarial training expects SYMMETRIC ([-1, 1]) scaling")
    if not train:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        g_losses, d_losses, l1s = [], [], []
        for b, batch in enumerate(iterate_batches(train, cfg.batch_size, rng), start=1):
            inputs, labels = stack_batch(batch)
            try:
                with no_grad():
                    fake = gan(Tensor(inputs)).data
                for _ in range(cfg.n_critic):
                    d_losses.append(critic_step(gan, labels, fake, cfg))
                g_loss, _, l1 = generator_step(gan, inputs, labels, cfg)
            except NumericalError as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {b}: {exc}") from exc
            g_losses.append(g_loss)
            l1s.append(l1)
        history.records.append(
            EpochRecord(
                epoch,
                float(np.mean(g_losses)),
                float(np.mean(d_losses)),
                float(np.mean(l1s)),
                time.perf_counter() - started,
            )
        )
        if on_epoch is not None:
            on_epoch(epoch, gan)
    return history


def train_model(
    model: Forecaster,
    train: Sequence[SequenceSample],
    cfg: TrainConfig,
    on_epoch: EpochCallback | None = None,
) -> TrainHistory:
    if isinstance(model, AdversarialForecaster):
        return train_gan(model, train, cfg, on_epoch)
    return train_supervised(model, train, cfg, on_epoch)
