"""Minibatch MAE training with Adam, evaluation, and checkpoints."""

from __future__ import annotations

import json
import math
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ximp.autograd import (
    CHECKPOINT_FORMAT_VERSION,
    absolute,
    adam_step,
    checkpoint_dict,
    constant,
    dumps_checkpoint,
    mean_all,
    parameters_from_checkpoint,
    sub,
)
from ximp.batch import FEATURIZATION_VERSION, collate
from ximp.data import Dataset
from ximp.errors import ConfigError, IoError, NonFiniteLoss, NonFiniteValue, VersionMismatch
from ximp.model import HimpConfig, HimpModel, ModelConfig, XimpModel
from ximp.rng import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    lr_schedule: str = "constant"  # or "cosine": anneal to zero over all steps

    def __post_init__(self) -> None:
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")

    def lr_at(self, step: int, total_steps: int) -> float:
        if self.lr_schedule == "constant" or total_steps <= 1:
            return self.lr
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def model_config_from_dict(d: dict):
    """``{"kind": "ximp" | "himp", ...fields}`` to a model config."""
    d = dict(d)
    kind = d.pop("kind", "ximp")
    if kind == "ximp":
        return ModelConfig.from_dict(d)
    if kind == "himp":
        known = {f.name for f in fields(HimpConfig)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown HIMP config keys {sorted(extra)}")
        return HimpConfig(**d)
    raise ConfigError(f"unknown model kind {kind!r}")


def model_config_to_dict(config) -> dict:
    if isinstance(config, HimpConfig):
        return {"kind": "himp", **config.to_dict()}
    return {"kind": "ximp", **config.to_dict()}


def train_config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown training keys {sorted(extra)}")
    return TrainConfig(**d)


def build_model(config, seed: int):
    if isinstance(config, HimpConfig):
        return HimpModel(config, seed)
    return XimpModel(config, seed)


def featurization_of(config) -> tuple[tuple[str, ...], int]:
    if isinstance(config, HimpConfig):
        return ("jt",), 1
    return config.abstractions, config.jt_resolution


@dataclass
class TrainResult:
    model: object
    train_mae: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    train_config: TrainConfig | None = None
    seed: int = 0

    def checkpoint(self) -> dict:
        return checkpoint_dict(
            self.model.params,
            model_config_to_dict(self.model.config),
            featurization_version=FEATURIZATION_VERSION,
            train=asdict(self.train_config) if self.train_config else None,
            seed=self.seed,
            train_mae=self.train_mae,
            val_mae=self.val_mae,
        )


def check_dimp_bounds(monitor: list, tol: float = 1e-9) -> None:
    """Assert the magnitude bounds on every recorded DIMP projection."""
    for s, t, projected in monitor:
        inf_in = np.abs(t).sum(axis=1).max(initial=0.0)
        inf_out = np.abs(projected).sum(axis=1).max(initial=0.0)
        one_in = np.abs(t).sum(axis=0).max(initial=0.0)
        one_out = np.abs(projected).sum(axis=0).max(initial=0.0)
        if inf_out > inf_in + tol or one_out > s.shape[0] * one_in + tol:
            raise AssertionError(f"DIMP projection exceeds its bound: {inf_out} > {inf_in} or {one_out}")


def predict(model, inputs, batch_size: int = 256) -> np.ndarray:
    """Inference-mode predictions (dropout off) for a list of MoleculeInputs."""
    out = []
    for start in range(0, len(inputs), batch_size):
        batch = collate(inputs[start : start + batch_size], featurization_of(model.config)[0])
        out.append(model.forward(batch).prediction.value[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


def train(
    config,
    train_config: TrainConfig,
    dataset: Dataset,
    indices,
    seed: int,
    val_indices=None,
    monitor_dimp: bool = False,
) -> TrainResult:
    """Fit a fresh model on ``dataset[indices]``; per-epoch MAEs are in inference mode."""
    names, resolution = featurization_of(config)
    items = dataset.inputs(indices, names, resolution)
    val_items = dataset.inputs(val_indices, names, resolution) if val_indices else []
    y = np.array([m.target for m in items])
    y_val = np.array([m.target for m in val_items])
    model = build_model(config, seed)
    shuffle_rng = Rng.derive(seed, 0x5F)
    dropout_rng = Rng.derive(seed, 0xD0)
    result = TrainResult(model, train_config=train_config, seed=seed)
    steps_per_epoch = math.ceil(len(items) / train_config.batch_size)
    total_steps = steps_per_epoch * train_config.epochs
    for epoch in range(train_config.epochs):
        order = shuffle_rng.permutation(len(items))
        for step, start in enumerate(range(0, len(order), train_config.batch_size)):
            batch = collate([items[i] for i in order[start : start + train_config.batch_size]], names)
            monitor = [] if monitor_dimp else None
            try:
                kwargs = {"monitor": monitor} if isinstance(model, XimpModel) else {}
                pred = model.forward(batch, rng=dropout_rng, **kwargs).prediction
                loss = mean_all(absolute(sub(pred, constant(batch.targets))))
            except NonFiniteValue as e:
                raise NonFiniteLoss(f"non-finite value at epoch {epoch} step {step}: {e}") from e
            if monitor:
                check_dimp_bounds(monitor)
            model.params.zero_grad()
            loss.backward()
            lr = train_config.lr_at(epoch * steps_per_epoch + step, total_steps)
            adam_step(model.params, lr, train_config.weight_decay)
        result.train_mae.append(mae(predict(model, items), y))
        if val_items:
            result.val_mae.append(mae(predict(model, val_items), y_val))
        log.debug("epoch %d train MAE %.4f", epoch, result.train_mae[-1])
    return result


def load_checkpoint(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e


def save_checkpoint(ckpt: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_checkpoint(ckpt))


def model_from_checkpoint(ckpt: dict):
    if ckpt.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {ckpt.get('format_version')!r}, expected {CHECKPOINT_FORMAT_VERSION}")
    if ckpt.get("featurization_version") != FEATURIZATION_VERSION:
        raise VersionMismatch(
            f"checkpoint featurization {ckpt.get('featurization_version')!r}, expected {FEATURIZATION_VERSION}"
        )
    model = build_model(model_config_from_dict(ckpt["config"]), 0)
    model.params.load_state_dict(parameters_from_checkpoint(ckpt))
    return model


def evaluate(checkpoint, dataset: Dataset, indices=None) -> float:
    """MAE of a checkpoint (dict or loaded model) on ``dataset``, dropout disabled."""
    model = checkpoint if isinstance(checkpoint, (XimpModel, HimpModel)) else model_from_checkpoint(checkpoint)
    if indices is None:
        indices = range(len(dataset))
    names, resolution = featurization_of(model.config)
    items = dataset.inputs(list(indices), names, resolution)
    return mae(predict(model, items), np.array([m.target for m in items]))
