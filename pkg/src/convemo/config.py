"""Training configuration.

Defaults follow the published conversation-emotion setup for the dyadic
corpus: dropout 0.1, 7 graph-attention heads, 4 context-encoder layers,
initial learning rate 1e-4, and symmetric graph windows of 10. Presets
for the other corpus's per-modality settings are provided as well.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

ABLATIONS = ("full", "no_gnn", "no_relations")


class ConfigError(ValueError):
    """Configuration value or file failed validation."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    dropout: float = 0.1
    gnn_heads: int = 7
    seq_context_layers: int = 4
    encoder_heads: int = 4
    ffn_mult: int = 4
    window_past: int | None = 10
    window_future: int | None = 10
    edge_mode: str = "both_directions"
    self_loops: bool = True
    relu_between_graph_layers: bool = False
    classifier_hidden: int | None = None
    multilabel_threshold: float = 0.5
    epochs: int = 50
    seed: int = 0
    ablation: str = "full"
    active_modalities: str = "atv"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_accum: int = 1
    patience: int = 10

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        for name in ("gnn_heads", "seq_context_layers", "encoder_heads", "ffn_mult",
                     "epochs", "grad_accum"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("window_past", "window_future"):
            w = getattr(self, name)
            if w is not None and w < 0:
                raise ConfigError(f"{name} must be >= 0 or null for unbounded")
        if self.edge_mode not in ("both_directions", "single_direction"):
            raise ConfigError(f"unknown edge_mode '{self.edge_mode}'")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        from .dataset import CorpusError, normalize_modalities

        try:
            object.__setattr__(self, "active_modalities",
                               normalize_modalities(self.active_modalities))
        except CorpusError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values).validate()

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw).validate()


def iemocap_defaults() -> TrainConfig:
    return TrainConfig().validate()


def mosei_defaults(modalities: str = "atv") -> TrainConfig:
    """Per-modality presets for the sentiment/emotion corpus."""
    table = {
        "t": dict(dropout=0.399, gnn_heads=3, seq_context_layers=5, learning_rate=3.3e-3),
        "at": dict(dropout=0.103, gnn_heads=1, seq_context_layers=2, learning_rate=6.9e-3),
        "atv": dict(dropout=0.337, gnn_heads=2, seq_context_layers=1, learning_rate=1.1e-3),
    }
    from .dataset import normalize_modalities

    key = normalize_modalities(modalities)
    if key not in table:
        raise ConfigError(f"no preset for modality set '{key}'")
    return TrainConfig(active_modalities=key, **table[key]).validate()
