"""End-to-end training: per-dialogue forward/backward, adaptive-moment
updates, early stopping on validation weighted F1, checkpointing, and
the utterance-masking analysis.

Every run is a pure function of (seed, config, corpus): dialogue order,
parameter init, and dropout all draw from generators spawned off the
config seed, so identical runs reproduce identical histories and
checkpoints byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from . import metrics
from .config import ConfigError, TrainConfig
from .dataset import Corpus, Dialogue
from .model import (
    ForwardResult,
    ModelDims,
    ModelParams,
    dialogue_gold,
    forward_dialogue,
    forward_fused,
    fused_matrix,
)
from .tensor import NonFiniteError, Tape, Tensor, backward

CHECKPOINT_FORMAT = "convemo-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingAbort(RuntimeError):
    """Training hit a non-finite loss; message names the dialogue."""


class Adam:
    """Adaptive-moment optimizer over a named parameter map."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            t.data = t.data - self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def state_dict(self) -> dict:
        return {"step_count": self.step_count,
                "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k], dtype=np.float64).reshape(self.m[k].shape)
            self.v[k] = np.asarray(state["v"][k], dtype=np.float64).reshape(self.v[k].shape)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_wf1: float


@dataclass
class TrainResult:
    model: ModelParams            # best-validation parameters
    history: list[EpochStats]
    best_epoch: int
    best_valid_wf1: float
    final_snapshot: dict[str, np.ndarray]
    best_optimizer_state: dict
    label_names: list[str]

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,valid_wf1"]
        for row in self.history:
            lines.append(f"{row.epoch},{row.train_loss!r},{row.valid_wf1!r}")
        return "\n".join(lines) + "\n"


def predict_dialogue(dialogue: Dialogue, model: ModelParams,
                     config: TrainConfig) -> np.ndarray:
    return forward_dialogue(dialogue, model, config, training=False).preds


def _validation_score(dialogues: list[Dialogue], model: ModelParams,
                      config: TrainConfig) -> float:
    preds = [predict_dialogue(d, model, config) for d in dialogues]
    if model.dims.task_mode == "single":
        gold = [u.label for d in dialogues for u in d.utterances]
        flat = [int(p) for seq in preds for p in seq]
        _, wf1 = metrics.weighted_f1(gold, flat, model.dims.num_classes)
        return wf1
    gold = np.concatenate([dialogue_gold(d, "multi") for d in dialogues])
    flat = np.concatenate(preds)
    return float(metrics.multilabel_f1(gold, flat).mean())


def train(corpus: Corpus, config: TrainConfig) -> TrainResult:
    """Train on the corpus's train split, early-stopping on validation
    weighted F1; returns the best-validation model plus the full history."""
    config = config.validate()
    train_dialogues = corpus.split("train")
    valid_dialogues = corpus.split("valid")
    if not train_dialogues:
        raise ConfigError("corpus has no train split")
    if not valid_dialogues:
        raise ConfigError("corpus has no valid split")

    seq = np.random.SeedSequence(config.seed)
    init_rng, shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    dims = ModelDims.for_corpus(corpus, config)
    model = ModelParams.init(config, dims, init_rng)
    optimizer = Adam(model.named(), config.learning_rate,
                     config.beta1, config.beta2, config.adam_eps)

    history: list[EpochStats] = []
    best_wf1 = -1.0
    best_epoch = -1
    best_snapshot = model.snapshot()
    best_opt_state = optimizer.state_dict()
    final_snapshot = model.snapshot()

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_dialogues))
        losses = []
        pending = 0
        for idx in order:
            dialogue = train_dialogues[idx]
            tape = Tape()
            try:
                result = forward_dialogue(dialogue, model, config, training=True,
                                          rng=dropout_rng, tape=tape)
                gold = dialogue_gold(dialogue, dims.task_mode)
                loss = clf.loss(result.logits, gold, dims.task_mode, tape)
                backward(loss, tape)
            except NonFiniteError as exc:
                raise TrainingAbort(
                    f"non-finite loss in dialogue '{dialogue.dialogue_id}' "
                    f"at epoch {epoch}: {exc}") from exc
            losses.append(loss.item())
            pending += 1
            if pending == config.grad_accum:
                optimizer.step()
                optimizer.zero_grad()
                pending = 0
        if pending:
            optimizer.step()
            optimizer.zero_grad()

        valid_wf1 = _validation_score(valid_dialogues, model, config)
        history.append(EpochStats(epoch, float(np.mean(losses)), valid_wf1))
        if valid_wf1 > best_wf1:
            best_wf1 = valid_wf1
            best_epoch = epoch
            best_snapshot = model.snapshot()
            best_opt_state = optimizer.state_dict()
        elif epoch - best_epoch > config.patience:
            break

    final_snapshot = model.snapshot()
    model.restore(best_snapshot)
    return TrainResult(model, history, best_epoch, best_wf1,
                       final_snapshot, best_opt_state, list(corpus.label_names))


def evaluate_model(corpus: Corpus, model: ModelParams, config: TrainConfig,
                   split: str = "test", shift_level: str = "utterance") -> metrics.EvalReport:
    if corpus.task_mode != "single":
        raise ConfigError("evaluate_model needs a single-label corpus; "
                          "use evaluate_multilabel for multi-label data")
    dialogues = corpus.split(split)
    if not dialogues:
        raise ConfigError(f"corpus has no '{split}' dialogues")
    preds = [predict_dialogue(d, model, config) for d in dialogues]
    return metrics.make_report(dialogues, preds, corpus.label_names, shift_level)


def evaluate_multilabel(corpus: Corpus, model: ModelParams, config: TrainConfig,
                        split: str = "test") -> dict:
    """Per-class weighted F1 for multi-label corpora, plus the mean and the
    exact-match (all labels right) accuracy."""
    if corpus.task_mode != "multi":
        raise ConfigError("evaluate_multilabel needs a multi-label corpus")
    dialogues = corpus.split(split)
    if not dialogues:
        raise ConfigError(f"corpus has no '{split}' dialogues")
    gold = np.concatenate([dialogue_gold(d, "multi") for d in dialogues])
    pred = np.concatenate([predict_dialogue(d, model, config) for d in dialogues])
    per_class = metrics.multilabel_f1(gold, pred)
    return {
        "per_class_f1": {name: float(v) for name, v in zip(corpus.label_names, per_class)},
        "mean_f1": float(per_class.mean()),
        "exact_match_accuracy": float((gold == pred).all(axis=1).mean()),
    }


@dataclass
class MaskReport:
    baseline_f1: float
    masked_f1: list[float]  # weighted F1 with utterance k's features zeroed


def mask_importance(dialogue: Dialogue, model: ModelParams,
                    config: TrainConfig) -> MaskReport:
    """Dialogue-level weighted F1 when masking one utterance at a time.

    Masking zeroes the utterance's fused feature vector; the node and its
    edges stay, so only information is removed, not topology.
    """
    x = fused_matrix(dialogue, config.active_modalities)
    gold = [u.label for u in dialogue.utterances]

    def f1_of(features: np.ndarray) -> float:
        result = forward_fused(Tensor(features), dialogue.speakers, model, config)
        _, wf1 = metrics.weighted_f1(gold, result.preds, model.dims.num_classes)
        return wf1

    baseline = f1_of(x)
    masked = []
    for k in range(len(dialogue)):
        x_masked = x.copy()
        x_masked[k] = 0.0
        masked.append(f1_of(x_masked))
    return MaskReport(baseline, masked)


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(path, model: ModelParams, config: TrainConfig,
                    optimizer_state: dict, epoch: int, valid_wf1: float,
                    label_names: list[str], corpus_fingerprint: str = "") -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "dims": model.dims.to_dict(),
        "label_names": label_names,
        "epoch": epoch,
        "valid_weighted_f1": valid_wf1,
        "corpus_fingerprint": corpus_fingerprint,
        "params": {name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
                   for name, t in model.named().items()},
        "optimizer": {
            "step_count": optimizer_state["step_count"],
            "m": {k: v.reshape(-1).tolist() for k, v in optimizer_state["m"].items()},
            "v": {k: v.reshape(-1).tolist() for k, v in optimizer_state["v"].items()},
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


@dataclass
class Checkpoint:
    model: ModelParams
    config: TrainConfig
    epoch: int
    valid_wf1: float
    label_names: list[str]
    corpus_fingerprint: str
    optimizer_state: dict = field(repr=False, default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} file: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    config = TrainConfig.from_dict(payload["config"])
    dims = ModelDims.from_dict(payload["dims"])
    model = ModelParams.init(config, dims, np.random.default_rng(0))
    snapshot = {name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
                for name, entry in payload["params"].items()}
    model.restore(snapshot)
    opt = payload["optimizer"]
    named = model.named()
    optimizer_state = {
        "step_count": opt["step_count"],
        "m": {k: np.asarray(v, dtype=np.float64).reshape(named[k].shape)
              for k, v in opt["m"].items()},
        "v": {k: np.asarray(v, dtype=np.float64).reshape(named[k].shape)
              for k, v in opt["v"].items()},
    }
    return Checkpoint(model, config, int(payload["epoch"]),
                      float(payload["valid_weighted_f1"]),
                      list(payload["label_names"]),
                      payload.get("corpus_fingerprint", ""),
                      optimizer_state)
