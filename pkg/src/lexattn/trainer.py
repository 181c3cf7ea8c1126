"""Training loop: Adadelta with a plateau-triggered permanent SGD fallback,
sigmoid-ramp multiplicative weight decay, evaluation, and JSON checkpoints.

The decay is applied after each optimizer update rather than as a loss
term, so gradient checks (which run without the optimizer) stay clean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder
from .encoder import EncoderConfig, ModelState
from .errors import DataFormatError, NumericError
from .lexkb import LexicalKB
from .numcore import STREAM_DROPOUT, STREAM_SHUFFLE, ParamStore, make_rng
from .textio import Example, TokenizedPair, Vocab, encode_pair

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization constants. Desk-scale schedule defaults; the published
    schedule lengths are available via `paper_scale`."""

    rho: float = 0.95
    epsilon: float = 1e-8
    adadelta_lr: float = 0.5
    sgd_lr: float = 3e-4
    batch_size: int = 16
    plateau_steps: int = 300
    l2_full_ratio: float = 0.9e-5
    l2_full_step: int = 1000
    max_steps: int = 2000
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        positive = (
            "epsilon", "adadelta_lr", "sgd_lr", "batch_size",
            "plateau_steps", "l2_full_ratio", "l2_full_step", "eval_every",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        # max_steps=0 is legal: train() then returns the initial checkpoint
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        """The published schedule lengths (100x the desk defaults)."""
        base = dict(plateau_steps=30_000, l2_full_step=100_000, max_steps=200_000)
        base.update(overrides)
        return cls(**base)


def l2_ratio(t: float, full_step: int, full_ratio: float) -> float:
    """Sigmoid ramp from ~0 to full_ratio, reaching exactly half at
    t = full_step/2; the argument spans [-8, 8] over [0, full_step]."""
    if full_step <= 0:
        raise ValueError(f"full_step must be positive, got {full_step}")
    half = full_step / 2.0
    x = (t - half) * 8.0 / half
    if x >= 0.0:
        sig = 1.0 / (1.0 + math.exp(-x))
    else:
        e = math.exp(x)
        sig = e / (1.0 + e)
    return sig * full_ratio


@dataclass
class OptState:
    """Optimizer phase and plateau bookkeeping.

    The per-parameter Adadelta accumulators live in each Param's optimizer
    slots ("sq_avg", "acc_delta"), shaped like their parameters.
    """

    phase: str = "adadelta"
    best_val: float = float("-inf")
    steps_since_improvement: int = 0

    def note_step(self) -> None:
        self.steps_since_improvement += 1

    def record_eval(self, val_acc: float) -> bool:
        """Strict improvement resets the plateau counter; ties do not."""
        if val_acc > self.best_val:
            self.best_val = val_acc
            self.steps_since_improvement = 0
            return True
        return False

    def maybe_switch(self, plateau_steps: int) -> bool:
        """Permanent switch once the counter reaches the plateau budget;
        takes effect from the next optimizer step."""
        if self.phase == "adadelta" and self.steps_since_improvement >= plateau_steps:
            self.phase = "sgd"
            return True
        return False


def _check_finite(delta: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(delta)):
        raise NumericError(f"non-finite optimizer update for {name}")


def adadelta_step(store: ParamStore, cfg: TrainConfig, t: int) -> None:
    """Standard Adadelta recurrence, then multiplicative decay."""
    decay = 1.0 - l2_ratio(t, cfg.l2_full_step, cfg.l2_full_ratio)
    for p in store:
        g = p.grad
        sq_avg = p.slot("sq_avg")
        acc_delta = p.slot("acc_delta")
        sq_avg *= cfg.rho
        sq_avg += (1.0 - cfg.rho) * g * g
        with np.errstate(invalid="ignore", over="ignore"):
            delta = -(
                np.sqrt(acc_delta + cfg.epsilon) / np.sqrt(sq_avg + cfg.epsilon)
            ) * g * cfg.adadelta_lr
        _check_finite(delta, p.name)
        acc_delta *= cfg.rho
        acc_delta += (1.0 - cfg.rho) * delta * delta
        p.value += delta
        p.value *= decay


def sgd_step(store: ParamStore, cfg: TrainConfig, t: int) -> None:
    """Plain SGD at the fallback rate, with the same decay schedule."""
    decay = 1.0 - l2_ratio(t, cfg.l2_full_step, cfg.l2_full_ratio)
    for p in store:
        delta = -cfg.sgd_lr * p.grad
        _check_finite(delta, p.name)
        p.value += delta
        p.value *= decay


# ---------------------------------------------------------------- evaluation


@dataclass
class Metrics:
    """Accuracy, mean cross-entropy, and per-class gold/predicted/correct
    counts over one dataset."""

    accuracy: float
    mean_loss: float
    count: int
    per_class: dict[int, dict[str, int]]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_loss": self.mean_loss,
            "count": self.count,
            "per_class": {str(k): dict(v) for k, v in self.per_class.items()},
        }


def _evaluate_pairs(
    state: ModelState, pairs: list[TokenizedPair], kb: LexicalKB
) -> Metrics:
    if not pairs:
        raise DataFormatError("cannot evaluate an empty dataset")
    n_classes = state.config.n_classes
    per_class = {c: {"gold": 0, "predicted": 0, "correct": 0} for c in range(n_classes)}
    correct = 0
    total_loss = 0.0
    for idx, pair in enumerate(pairs):
        if pair.label is None or not 0 <= pair.label < n_classes:
            raise DataFormatError(
                f"example {idx} has label {pair.label!r}, need 0..{n_classes - 1}"
            )
        pred = encoder.predict(pair, kb, state)
        per_class[pair.label]["gold"] += 1
        per_class[pred.label]["predicted"] += 1
        if pred.label == pair.label:
            per_class[pair.label]["correct"] += 1
            correct += 1
        with np.errstate(divide="ignore"):
            total_loss += float(-np.log(pred.probs[pair.label]))
    return Metrics(
        accuracy=correct / len(pairs),
        mean_loss=total_loss / len(pairs),
        count=len(pairs),
        per_class=per_class,
    )


def encode_dataset(
    dataset: list[Example], state: ModelState
) -> list[TokenizedPair]:
    cfg = state.config
    return [
        encode_pair(e.text_a, e.text_b, state.vocab, cfg.max_a, cfg.max_b, e.label)
        for e in dataset
    ]


def evaluate(state: ModelState, dataset: list[Example], kb: LexicalKB) -> Metrics:
    """Deterministic evaluation: dropout off, argmax ties to the lower id."""
    return _evaluate_pairs(state, encode_dataset(dataset, state), kb)


# ---------------------------------------------------------------- checkpoints


def state_to_checkpoint(state: ModelState) -> dict:
    """Checkpoint document; parameter order is the store's insertion order
    and float values survive the JSON round trip bit-exactly."""
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": state.config.to_dict(),
        "vocab": {"tokens": list(state.vocab.id_to_token)},
        "params": {
            p.name: {"shape": list(p.value.shape), "data": p.value.reshape(-1).tolist()}
            for p in state.store
        },
    }


def checkpoint_to_state(doc: dict) -> ModelState:
    try:
        version = doc["format_version"]
        config_dict = doc["config"]
        tokens = doc["vocab"]["tokens"]
        params = doc["params"]
    except (KeyError, TypeError) as err:
        raise DataFormatError(f"malformed checkpoint: missing {err}") from err
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported checkpoint format_version {version!r}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        config = EncoderConfig.from_dict(config_dict)
    except (TypeError, ValueError) as err:
        raise DataFormatError(f"bad checkpoint config: {err}") from err
    vocab = Vocab.from_tokens(list(tokens))
    store = ParamStore()
    for name, entry in params.items():
        try:
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as err:
            raise DataFormatError(f"bad checkpoint entry {name!r}: {err}") from err
        store.add(name, arr)
    return ModelState.from_store(config, vocab, store)


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state_to_checkpoint(state)) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelState:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataFormatError(f"checkpoint is not valid JSON: {err}") from err
    return checkpoint_to_state(doc)


def save_log(rows: list[dict], path: str | Path) -> None:
    """Metrics log as JSON lines, one record per entry."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    best_checkpoint: dict
    log: list[dict] = field(repr=False)
    best_val_acc: float
    final_phase: str
    steps_run: int


def _log_row(step: int, loss: float, val_acc: float, phase: str, cfg: TrainConfig) -> dict:
    return {
        "step": step,
        "loss": loss,
        "val_acc": val_acc,
        "phase": phase,
        "l2_ratio": l2_ratio(step, cfg.l2_full_step, cfg.l2_full_ratio),
    }


def train(
    state: ModelState,
    train_set: list[Example],
    val_set: list[Example],
    kb: LexicalKB,
    cfg: TrainConfig,
) -> TrainResult:
    """Optimize in place; returns the best-validation checkpoint and log.

    Per-epoch shuffling and dropout draw from separate seeded streams, so a
    (config, seed) pair pins the whole trajectory. Validation runs every
    eval_every steps; strict accuracy improvement resets the plateau
    counter and snapshots the checkpoint. Once the counter reaches
    plateau_steps the optimizer switches to SGD for good, starting with the
    following step.
    """
    if not train_set or not val_set:
        raise DataFormatError("train and validation splits must be non-empty")
    train_pairs = encode_dataset(train_set, state)
    val_pairs = encode_dataset(val_set, state)
    if cfg.max_steps == 0:
        baseline = _evaluate_pairs(state, val_pairs, kb)
        return TrainResult(
            best_checkpoint=state_to_checkpoint(state),
            log=[],
            best_val_acc=baseline.accuracy,
            final_phase="adadelta",
            steps_run=0,
        )

    shuffle_rng = make_rng(cfg.seed, STREAM_SHUFFLE)
    drop_rng = make_rng(cfg.seed, STREAM_DROPOUT)
    opt = OptState()
    baseline = _evaluate_pairs(state, val_pairs, kb)
    opt.record_eval(baseline.accuracy)
    best_checkpoint = state_to_checkpoint(state)
    log = [_log_row(0, baseline.mean_loss, baseline.accuracy, opt.phase, cfg)]

    t = 0
    while t < cfg.max_steps:
        order = shuffle_rng.permutation(len(train_pairs))
        for start in range(0, len(order), cfg.batch_size):
            t += 1
            batch = [train_pairs[i] for i in order[start : start + cfg.batch_size]]
            loss = encoder.loss_and_grads(batch, kb, state, training=True, rng=drop_rng)
            if opt.phase == "adadelta":
                adadelta_step(state.store, cfg, t)
            else:
                sgd_step(state.store, cfg, t)
            opt.note_step()
            if t % cfg.eval_every == 0 or t == cfg.max_steps:
                metrics = _evaluate_pairs(state, val_pairs, kb)
                if opt.record_eval(metrics.accuracy):
                    best_checkpoint = state_to_checkpoint(state)
                log.append(_log_row(t, loss, metrics.accuracy, opt.phase, cfg))
            opt.maybe_switch(cfg.plateau_steps)
            if t >= cfg.max_steps:
                break

    return TrainResult(
        best_checkpoint=best_checkpoint,
        log=log,
        best_val_acc=opt.best_val,
        final_phase=opt.phase,
        steps_run=t,
    )
