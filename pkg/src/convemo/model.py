"""Full model assembly and per-dialogue forward pass.

The pipeline per dialogue: fuse modality features, contextualize with
the position-free encoder, form the typed conversation graph, run the
relational convolution and graph-transformer attention, then classify
every utterance. Ablations reshape the pipeline structurally: ``no_gnn``
routes encoder features straight to the classifier (and allocates no
graph parameters at all); ``no_relations`` collapses every relation
type to a single one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .classifier import ClassifierOutput, ClassifierParams, classify
from .config import TrainConfig
from .dataset import Corpus, Dialogue, fuse_features, fused_dim
from .encoder import EncoderParams, encode
from .gnn import GraphTransformerParams, RgcnParams, bypass_gnn, graph_transformer_forward, rgcn_forward
from .graph import collapse_relations, graph_from_speakers, num_relation_types
from .tensor import Tape, Tensor


@dataclass
class ModelDims:
    width: int
    num_classes: int
    num_speakers: int
    task_mode: str = "single"

    def to_dict(self) -> dict:
        return {"width": self.width, "num_classes": self.num_classes,
                "num_speakers": self.num_speakers, "task_mode": self.task_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelDims":
        return cls(**d)

    @classmethod
    def for_corpus(cls, corpus: Corpus, config: TrainConfig) -> "ModelDims":
        width = fused_dim(corpus.dims, config.active_modalities)
        if width == 0:
            raise ValueError("active modalities have zero total width in this corpus")
        return cls(width, corpus.num_classes, corpus.max_speakers, corpus.task_mode)


@dataclass
class ModelParams:
    dims: ModelDims
    encoder: EncoderParams
    rgcn: RgcnParams | None
    graph_attention: GraphTransformerParams | None
    classifier: ClassifierParams

    @classmethod
    def init(cls, config: TrainConfig, dims: ModelDims,
             rng: np.random.Generator) -> "ModelParams":
        d = dims.width
        encoder = EncoderParams.init(d, config.seq_context_layers, config.encoder_heads,
                                     rng, ffn_width=config.ffn_mult * d)
        if config.ablation == "no_gnn":
            rgcn, gt = None, None
        else:
            relations = (1 if config.ablation == "no_relations"
                         else num_relation_types(dims.num_speakers))
            rgcn = RgcnParams.init(d, d, relations, rng)
            gt = GraphTransformerParams.init(d, d, config.gnn_heads, rng)
        clf = ClassifierParams.init(d, dims.num_classes, rng,
                                    hidden=config.classifier_hidden)
        return cls(dims, encoder, rgcn, gt, clf)

    def named(self) -> dict[str, Tensor]:
        out = self.encoder.named()
        if self.rgcn is not None:
            out.update(self.rgcn.named())
        if self.graph_attention is not None:
            out.update(self.graph_attention.named())
        out.update(self.classifier.named())
        return out

    def param_count(self) -> int:
        return sum(t.data.size for t in self.named().values())

    def zero_grads(self) -> None:
        for t in self.named().values():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named().items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        named = self.named()
        missing = set(named) - set(snapshot)
        extra = set(snapshot) - set(named)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, t in named.items():
            arr = np.asarray(snapshot[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"parameter '{name}': shape {arr.shape} != {t.shape}")
            t.data = np.ascontiguousarray(arr)


@dataclass
class ForwardResult:
    output: ClassifierOutput
    context: Tensor       # encoder output Z (before any graph layer)
    graph_out: Tensor     # features entering the classifier

    @property
    def probs(self) -> Tensor:
        return self.output.probs

    @property
    def preds(self) -> np.ndarray:
        return self.output.preds

    @property
    def logits(self) -> Tensor:
        return self.output.logits


def fused_matrix(dialogue: Dialogue, active: str) -> np.ndarray:
    return np.stack([fuse_features(u, active) for u in dialogue.utterances])


def dialogue_gold(dialogue: Dialogue, task_mode: str) -> np.ndarray:
    if task_mode == "single":
        return np.asarray([u.label for u in dialogue.utterances], dtype=np.int64)
    return np.stack([np.asarray(u.label, dtype=np.float64) for u in dialogue.utterances])


def forward_fused(x: Tensor, speakers: list[int], params: ModelParams,
                  config: TrainConfig, training: bool = False,
                  rng: np.random.Generator | None = None,
                  tape: Tape | None = None,
                  capture: dict | None = None) -> ForwardResult:
    """Pipeline from an already-fused feature matrix; used directly by the
    utterance-masking analysis, which zeroes rows of ``x``."""
    z = encode(x, params.encoder, training, config.dropout, rng, tape, capture)
    if config.ablation == "no_gnn":
        h = bypass_gnn(z)
    else:
        g = graph_from_speakers(speakers, params.dims.num_speakers,
                                config.window_past, config.window_future,
                                config.edge_mode, config.self_loops)
        if config.ablation == "no_relations":
            g = collapse_relations(g)
        hid = rgcn_forward(z, g, params.rgcn, tape)
        if config.relu_between_graph_layers:
            hid = T.relu(hid, tape)
        h = graph_transformer_forward(hid, g, params.graph_attention, training,
                                      tape, capture)
    out = classify(h, params.classifier, params.dims.task_mode,
                   config.multilabel_threshold, tape)
    return ForwardResult(out, z, h)


def forward_dialogue(dialogue: Dialogue, params: ModelParams, config: TrainConfig,
                     training: bool = False, rng: np.random.Generator | None = None,
                     tape: Tape | None = None,
                     capture: dict | None = None) -> ForwardResult:
    x = Tensor(fused_matrix(dialogue, config.active_modalities))
    return forward_fused(x, dialogue.speakers, params, config, training, rng, tape, capture)
