"""Corpus ingestion, modality fusion, and synthetic corpora.

A corpus is a JSONL file: the first line is a header declaring label
names, modality dimensions, and the task mode; every following line is
one dialogue. Utterances carry precomputed per-modality feature vectors
(this library never touches raw audio/video/text) and either an integer
class label or a binary label vector in multi-label mode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

MODALITIES = ("a", "t", "v")
MODALITY_KEYS = {"a": "audio", "t": "text", "v": "video"}
SPLITS = ("train", "valid", "test")


class CorpusError(ValueError):
    """Corpus file or content failed validation."""


@dataclass
class Utterance:
    speaker: int
    label: int | np.ndarray  # int class id, or binary vector in multi mode
    audio: np.ndarray | None = None
    text: np.ndarray | None = None
    video: np.ndarray | None = None
    raw_text: str | None = None

    def modality(self, key: str) -> np.ndarray | None:
        return getattr(self, MODALITY_KEYS[key])


@dataclass
class Dialogue:
    dialogue_id: str
    num_speakers: int
    split: str
    utterances: list[Utterance]

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def speakers(self) -> list[int]:
        return [u.speaker for u in self.utterances]


@dataclass
class Corpus:
    dialogues: list[Dialogue]
    label_names: list[str]
    dims: dict[str, int]  # widths for "a", "t", "v"; 0 when absent corpus-wide
    task_mode: str = "single"  # "single" | "multi"

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    @property
    def max_speakers(self) -> int:
        return max(d.num_speakers for d in self.dialogues)

    def split(self, name: str) -> list[Dialogue]:
        if name not in SPLITS:
            raise CorpusError(f"unknown split '{name}'")
        return [d for d in self.dialogues if d.split == name]

    def find_dialogue(self, dialogue_id: str) -> Dialogue:
        for d in self.dialogues:
            if d.dialogue_id == dialogue_id:
                return d
        raise CorpusError(f"dialogue id '{dialogue_id}' not in corpus")

    def total_utterances(self) -> int:
        return sum(len(d) for d in self.dialogues)


def fuse_features(utt: Utterance, active: str = "atv") -> np.ndarray:
    """Concatenate the requested modality vectors in fixed a, t, v order.

    ``active`` is any subset of "atv"; request order never matters.
    """
    parts = []
    for key in MODALITIES:
        if key not in active:
            continue
        vec = utt.modality(key)
        if vec is None:
            raise CorpusError(f"utterance is missing requested modality '{key}'")
        parts.append(vec)
    if not parts:
        raise CorpusError("at least one modality must be active")
    return np.concatenate(parts)


def fused_dim(dims: dict[str, int], active: str = "atv") -> int:
    return sum(dims[k] for k in MODALITIES if k in active)


def normalize_modalities(active: str) -> str:
    """Canonical 'atv'-ordered form of a modality subset spec."""
    chosen = set(active)
    unknown = chosen - set(MODALITIES)
    if unknown:
        raise CorpusError(f"unknown modalities: {sorted(unknown)}")
    if not chosen:
        raise CorpusError("empty modality set")
    return "".join(k for k in MODALITIES if k in chosen)


# ---------------------------------------------------------------------------
# JSONL load / save

def _parse_label(raw, num_classes: int, task_mode: str, where: str):
    if task_mode == "single":
        if not isinstance(raw, int) or isinstance(raw, bool):
            raise CorpusError(f"{where}: single-label corpus needs integer labels")
        if not 0 <= raw < num_classes:
            raise CorpusError(f"{where}: label {raw} out of range for {num_classes} classes")
        return raw
    if not isinstance(raw, list) or len(raw) != num_classes:
        raise CorpusError(f"{where}: multi-label corpus needs a length-{num_classes} 0/1 vector")
    if any(v not in (0, 1) for v in raw):
        raise CorpusError(f"{where}: multi-label vector entries must be 0 or 1")
    return np.asarray(raw, dtype=np.float64)


def _parse_vector(raw, want_dim: int, key: str, where: str) -> np.ndarray | None:
    if want_dim == 0:
        if raw is not None:
            raise CorpusError(f"{where}: modality '{key}' not declared in header")
        return None
    if raw is None:
        raise CorpusError(f"{where}: missing modality '{key}' (declared width {want_dim})")
    vec = np.asarray(raw, dtype=np.float64)
    if vec.shape != (want_dim,):
        raise CorpusError(f"{where}: modality '{key}' has width {vec.shape}, expected ({want_dim},)")
    return vec


def load_corpus(path) -> Corpus:
    """Load and eagerly validate a JSONL corpus file."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorpusError(f"{path}: empty corpus file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}:1: header parse failure: {exc}") from exc
    for key in ("label_names", "dims", "task_mode"):
        if key not in header:
            raise CorpusError(f"{path}:1: header missing '{key}'")
    label_names = list(header["label_names"])
    dims = {k: int(header["dims"].get(k, 0)) for k in MODALITIES}
    task_mode = header["task_mode"]
    if task_mode not in ("single", "multi"):
        raise CorpusError(f"{path}:1: task_mode must be 'single' or 'multi'")
    if all(v == 0 for v in dims.values()):
        raise CorpusError(f"{path}:1: at least one modality dimension must be positive")

    dialogues = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: parse failure: {exc}") from exc
        where = f"{path}:{lineno}"
        did = rec.get("dialogue_id")
        if not did:
            raise CorpusError(f"{where}: missing dialogue_id")
        num_speakers = rec.get("num_speakers")
        if not isinstance(num_speakers, int) or num_speakers < 1:
            raise CorpusError(f"{where}: dialogue '{did}' needs a positive num_speakers")
        split = rec.get("split")
        if split not in SPLITS:
            raise CorpusError(f"{where}: dialogue '{did}' has invalid split {split!r}")
        raw_utts = rec.get("utterances") or []
        if not raw_utts:
            raise CorpusError(f"{where}: dialogue '{did}' has no utterances")
        utterances = []
        for idx, u in enumerate(raw_utts):
            spot = f"{where}: dialogue '{did}' utterance {idx}"
            speaker = u.get("speaker")
            if not isinstance(speaker, int) or not 0 <= speaker < num_speakers:
                raise CorpusError(f"{spot}: speaker index {speaker!r} not in [0, {num_speakers})")
            utterances.append(Utterance(
                speaker=speaker,
                label=_parse_label(u.get("label"), len(label_names), task_mode, spot),
                audio=_parse_vector(u.get("audio"), dims["a"], "a", spot),
                text=_parse_vector(u.get("text"), dims["t"], "t", spot),
                video=_parse_vector(u.get("video"), dims["v"], "v", spot),
                raw_text=u.get("raw_text"),
            ))
        dialogues.append(Dialogue(did, num_speakers, split, utterances))
    if not dialogues:
        raise CorpusError(f"{path}: corpus has no dialogues")
    return Corpus(dialogues, label_names, dims, task_mode)


def save_corpus(path, corpus: Corpus) -> None:
    def utt_record(u: Utterance) -> dict:
        rec: dict = {"speaker": u.speaker}
        rec["label"] = (int(u.label) if corpus.task_mode == "single"
                        else [int(v) for v in u.label])
        for key in MODALITIES:
            vec = u.modality(key)
            if vec is not None:
                rec[MODALITY_KEYS[key]] = vec.tolist()
        if u.raw_text is not None:
            rec["raw_text"] = u.raw_text
        return rec

    with open(path, "w") as fh:
        header = {"label_names": corpus.label_names, "dims": corpus.dims,
                  "task_mode": corpus.task_mode}
        fh.write(json.dumps(header) + "\n")
        for d in corpus.dialogues:
            fh.write(json.dumps({
                "dialogue_id": d.dialogue_id,
                "num_speakers": d.num_speakers,
                "split": d.split,
                "utterances": [utt_record(u) for u in d.utterances],
            }) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpora

@dataclass
class SynthSpec:
    num_dialogues: int = 200
    utterances_per_dialogue: int = 8
    num_speakers: int = 2
    num_classes: int = 4
    dims: dict[str, int] = field(default_factory=lambda: {"a": 8, "t": 16, "v": 8})
    dependency: str = "none"  # "none" | "neighbor"
    seed: int = 0
    center_scale: float = 2.0
    noise: float = 0.25
    split_fractions: tuple[float, float] = (0.7, 0.15)  # train, valid; rest is test


def synth_corpus(spec: SynthSpec) -> Corpus:
    """Deterministic synthetic corpus of well-separated feature clusters.

    ``none`` mode labels each utterance by its own cluster, so features
    alone solve the task. ``neighbor`` mode labels each utterance by the
    PREVIOUS utterance's cluster (first utterance: own cluster), which no
    feature-only model can recover; solving it requires the conversation
    structure.
    """
    if spec.num_dialogues < 1 or spec.utterances_per_dialogue < 1:
        raise ValueError("synthetic corpus sizes must be positive")
    if spec.dependency not in ("none", "neighbor"):
        raise ValueError(f"unknown dependency mode '{spec.dependency}'")
    rng = np.random.default_rng(spec.seed)
    active_dims = {k: int(spec.dims.get(k, 0)) for k in MODALITIES}
    centers = {}
    for key, width in active_dims.items():
        if width == 0:
            continue
        c = rng.standard_normal((spec.num_classes, width))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        centers[key] = c * spec.center_scale

    n_train = int(round(spec.num_dialogues * spec.split_fractions[0]))
    n_valid = int(round(spec.num_dialogues * spec.split_fractions[1]))
    dialogues = []
    for di in range(spec.num_dialogues):
        split = ("train" if di < n_train
                 else "valid" if di < n_train + n_valid else "test")
        clusters = rng.integers(0, spec.num_classes, size=spec.utterances_per_dialogue)
        speakers = rng.integers(0, spec.num_speakers, size=spec.utterances_per_dialogue)
        utterances = []
        for ui in range(spec.utterances_per_dialogue):
            c = int(clusters[ui])
            if spec.dependency == "neighbor" and ui > 0:
                label = int(clusters[ui - 1])
            else:
                label = c
            fields: dict = {}
            for key, width in active_dims.items():
                if width == 0:
                    continue
                vec = centers[key][c] + rng.standard_normal(width) * spec.noise
                fields[MODALITY_KEYS[key]] = vec
            utterances.append(Utterance(speaker=int(speakers[ui]), label=label, **fields))
        dialogues.append(Dialogue(f"synth-{di:04d}", spec.num_speakers, split, utterances))
    label_names = [f"class{c}" for c in range(spec.num_classes)]
    return Corpus(dialogues, label_names, active_dims, "single")


def truncate_context(corpus: Corpus, n: int) -> Corpus:
    """Split every dialogue into consecutive chunks of at most ``n`` utterances.

    Each chunk becomes an independent dialogue; order and labels untouched.
    """
    if n < 1:
        raise ValueError(f"chunk size must be >= 1, got {n}")
    dialogues = []
    for d in corpus.dialogues:
        if len(d) <= n:
            dialogues.append(d)
            continue
        for ci, start in enumerate(range(0, len(d), n)):
            chunk = d.utterances[start:start + n]
            dialogues.append(Dialogue(f"{d.dialogue_id}#{ci}", d.num_speakers, d.split, chunk))
    return replace(corpus, dialogues=dialogues)
