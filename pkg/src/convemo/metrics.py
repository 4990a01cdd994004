"""Evaluation metrics: accuracy, per-class and weighted F1, confusion
matrix, and the emotion-shift accuracy split.

Per-class F1 = 2*precision*recall/(precision+recall), with F1 defined as
0 whenever precision+recall is 0. The weighted average uses each class's
gold support as its weight. An utterance counts as an "emotion shift"
when its gold label differs from the previous reference utterance's gold
label: the previous utterance of anyone at utterance level, the same
speaker's previous utterance at speaker level. Reference-less utterances
(dialogue or speaker openings) count as non-shift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Corpus, Dialogue


def confusion_matrix(gold, pred, num_classes: int) -> np.ndarray:
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise ValueError(f"gold and pred lengths differ: {gold.shape} vs {pred.shape}")
    if gold.size and (gold.min() < 0 or gold.max() >= num_classes
                      or pred.min() < 0 or pred.max() >= num_classes):
        raise ValueError(f"labels out of range for {num_classes} classes")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    return cm


def _f1_from_counts(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> np.ndarray:
    precision = np.divide(tp, tp + fp, out=np.zeros_like(tp, dtype=float), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros_like(tp, dtype=float), where=(tp + fn) > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom,
                     out=np.zeros_like(denom), where=denom > 0)


def weighted_f1(gold, pred, num_classes: int) -> tuple[np.ndarray, float]:
    """Per-class F1 and the support-weighted average."""
    cm = confusion_matrix(gold, pred, num_classes)
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    per_class = _f1_from_counts(tp, fp, fn)
    support = cm.sum(axis=1)
    total = support.sum()
    weighted = float((per_class * support).sum() / total) if total else 0.0
    return per_class, weighted


def accuracy(gold, pred) -> float:
    gold = np.asarray(gold)
    pred = np.asarray(pred)
    if gold.shape != pred.shape:
        raise ValueError(f"gold and pred lengths differ: {gold.shape} vs {pred.shape}")
    if gold.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float((gold == pred).mean())


@dataclass
class ShiftSplit:
    shift_accuracy: float
    non_shift_accuracy: float
    shift_count: int
    non_shift_count: int


def _dialogues_of(corpus_or_dialogues) -> list[Dialogue]:
    if isinstance(corpus_or_dialogues, Corpus):
        return corpus_or_dialogues.dialogues
    return list(corpus_or_dialogues)


def shift_split(corpus_or_dialogues, preds: Sequence[Sequence[int]],
                level: str = "utterance") -> ShiftSplit:
    """Accuracy over emotion-shift vs emotion-stable utterances.

    ``preds`` is one prediction sequence per dialogue, aligned with the
    dialogue order of the corpus.
    """
    if level not in ("utterance", "speaker"):
        raise ValueError(f"level must be 'utterance' or 'speaker', got '{level}'")
    dialogues = _dialogues_of(corpus_or_dialogues)
    if len(dialogues) != len(preds):
        raise ValueError(f"{len(preds)} prediction sequences for {len(dialogues)} dialogues")
    buckets = {True: [0, 0], False: [0, 0]}  # shift? -> [correct, total]
    for d, p in zip(dialogues, preds):
        p = np.asarray(p)
        if p.shape != (len(d),):
            raise ValueError(f"dialogue '{d.dialogue_id}' has {len(d)} utterances "
                             f"but {p.shape} predictions")
        prev_any: int | None = None
        prev_by_speaker: dict[int, int] = {}
        for u, pred_label in zip(d.utterances, p):
            if not isinstance(u.label, (int, np.integer)):
                raise ValueError("shift analysis needs a single-label corpus")
            if level == "utterance":
                ref = prev_any
            else:
                ref = prev_by_speaker.get(u.speaker)
            is_shift = ref is not None and u.label != ref
            buckets[is_shift][0] += int(pred_label == u.label)
            buckets[is_shift][1] += 1
            prev_any = u.label
            prev_by_speaker[u.speaker] = u.label
    shift_c, shift_n = buckets[True]
    non_c, non_n = buckets[False]
    return ShiftSplit(
        shift_accuracy=shift_c / shift_n if shift_n else 0.0,
        non_shift_accuracy=non_c / non_n if non_n else 0.0,
        shift_count=shift_n,
        non_shift_count=non_n,
    )


def multilabel_f1(gold, pred) -> np.ndarray:
    """Per emotion class, the binary weighted F1 over {0, 1} outcomes,
    weighted by that class's binary support."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape or gold.ndim != 2:
        raise ValueError(f"gold/pred must be matching binary matrices, "
                         f"got {gold.shape} and {pred.shape}")
    out = np.zeros(gold.shape[1])
    for c in range(gold.shape[1]):
        per_class, weighted = weighted_f1(gold[:, c], pred[:, c], 2)
        out[c] = weighted
    return out


@dataclass
class EvalReport:
    accuracy: float
    per_class_f1: list[float]
    weighted_f1: float
    support: list[int]
    confusion: list[list[int]]
    shift_accuracy: float
    non_shift_accuracy: float
    shift_level: str
    label_names: list[str]

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_f1": self.per_class_f1,
            "weighted_f1": self.weighted_f1,
            "support": self.support,
            "confusion": self.confusion,
            "shift_accuracy": self.shift_accuracy,
            "non_shift_accuracy": self.non_shift_accuracy,
            "shift_level": self.shift_level,
            "label_names": self.label_names,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def format_table(self) -> str:
        names = [n[:10] for n in self.label_names]
        width = max(8, max(len(n) for n in names) + 2)
        header = "".join(n.rjust(width) for n in names) + "Acc.".rjust(width) + "wF1".rjust(width)
        values = "".join(f"{v * 100:.1f}".rjust(width) for v in self.per_class_f1)
        values += f"{self.accuracy * 100:.1f}".rjust(width)
        values += f"{self.weighted_f1 * 100:.1f}".rjust(width)
        shift = (f"shift acc {self.shift_accuracy * 100:.1f} | "
                 f"non-shift acc {self.non_shift_accuracy * 100:.1f} "
                 f"({self.shift_level} level)")
        return "\n".join([header, values, shift])


def make_report(dialogues: Sequence[Dialogue], preds: Sequence[Sequence[int]],
                label_names: Sequence[str], shift_level: str = "utterance") -> EvalReport:
    """Assemble the full report from per-dialogue gold labels and predictions."""
    gold_flat = [u.label for d in dialogues for u in d.utterances]
    pred_flat = [int(p) for seq in preds for p in seq]
    c = len(label_names)
    cm = confusion_matrix(gold_flat, pred_flat, c)
    per_class, weighted = weighted_f1(gold_flat, pred_flat, c)
    split = shift_split(dialogues, preds, shift_level)
    return EvalReport(
        accuracy=accuracy(gold_flat, pred_flat),
        per_class_f1=[float(v) for v in per_class],
        weighted_f1=weighted,
        support=[int(v) for v in cm.sum(axis=1)],
        confusion=cm.tolist(),
        shift_accuracy=split.shift_accuracy,
        non_shift_accuracy=split.non_shift_accuracy,
        shift_level=shift_level,
        label_names=list(label_names),
    )
