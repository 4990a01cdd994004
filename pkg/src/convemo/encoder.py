"""Position-free transformer context encoder.

Maps fused utterance features X (n x d) to contextualized features
Z (n x d) over a whole dialogue. There is deliberately no positional
signal anywhere: each layer is multi-head scaled dot-product attention
(concat + output projection), residual + LayerNorm, a ReLU feed-forward
block, and a second residual + LayerNorm. The observable consequence is
permutation equivariance over utterance order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor


def head_width(width: int, num_heads: int) -> int:
    """d // H when divisible, else ceil(d / H)."""
    return width // num_heads if width % num_heads == 0 else -(-width // num_heads)


@dataclass
class EncoderLayerParams:
    w_q: list[Tensor]  # per head, d x k
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_o: Tensor        # (k*H) x d
    w_ffn1: Tensor     # d x m
    w_ffn2: Tensor     # m x d
    gamma1: Tensor
    beta1: Tensor
    gamma2: Tensor
    beta2: Tensor


@dataclass
class EncoderParams:
    layers: list[EncoderLayerParams]
    width: int
    num_heads: int
    head_dim: int

    @classmethod
    def init(cls, width: int, num_layers: int, num_heads: int,
             rng: np.random.Generator, ffn_width: int | None = None) -> "EncoderParams":
        if width < 1 or num_layers < 1 or num_heads < 1:
            raise ValueError("encoder sizes must be positive")
        k = head_width(width, num_heads)
        m = ffn_width or 4 * width
        layers = []
        for _ in range(num_layers):
            layers.append(EncoderLayerParams(
                w_q=[T.parameter(T.xavier_uniform((width, k), rng)) for _ in range(num_heads)],
                w_k=[T.parameter(T.xavier_uniform((width, k), rng)) for _ in range(num_heads)],
                w_v=[T.parameter(T.xavier_uniform((width, k), rng)) for _ in range(num_heads)],
                w_o=T.parameter(T.xavier_uniform((k * num_heads, width), rng)),
                w_ffn1=T.parameter(T.xavier_uniform((width, m), rng)),
                w_ffn2=T.parameter(T.xavier_uniform((m, width), rng)),
                gamma1=T.parameter(np.ones(width)),
                beta1=T.parameter(np.zeros(width)),
                gamma2=T.parameter(np.ones(width)),
                beta2=T.parameter(np.zeros(width)),
            ))
        return cls(layers, width, num_heads, k)

    def named(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for li, layer in enumerate(self.layers):
            base = f"{prefix}.layer{li}"
            for h in range(self.num_heads):
                out[f"{base}.head{h}.wq"] = layer.w_q[h]
                out[f"{base}.head{h}.wk"] = layer.w_k[h]
                out[f"{base}.head{h}.wv"] = layer.w_v[h]
            out[f"{base}.wo"] = layer.w_o
            out[f"{base}.ffn1"] = layer.w_ffn1
            out[f"{base}.ffn2"] = layer.w_ffn2
            out[f"{base}.gamma1"] = layer.gamma1
            out[f"{base}.beta1"] = layer.beta1
            out[f"{base}.gamma2"] = layer.gamma2
            out[f"{base}.beta2"] = layer.beta2
        return out


def encode(x: Tensor, params: EncoderParams, training: bool = False,
           dropout_p: float = 0.0, rng: np.random.Generator | None = None,
           tape: Tape | None = None, capture: dict | None = None) -> Tensor:
    """Stack of encoder layers; ``capture['attention']`` collects the per
    layer/head attention maps when a dict is supplied."""
    if x.shape[1] != params.width:
        raise T.ShapeError(f"encoder expects width {params.width}, got {x.shape}")
    scale = 1.0 / math.sqrt(params.head_dim)
    maps: list[list[Tensor]] = []
    for layer in params.layers:
        heads = []
        layer_maps = []
        for h in range(params.num_heads):
            q = T.matmul(x, layer.w_q[h], tape)
            k = T.matmul(x, layer.w_k[h], tape)
            v = T.matmul(x, layer.w_v[h], tape)
            scores = T.mul_scalar(T.matmul(q, T.transpose(k, tape), tape), scale, tape)
            alpha = T.softmax_rows(scores, tape)
            layer_maps.append(alpha)
            heads.append(T.matmul(alpha, v, tape))
        maps.append(layer_maps)
        u_prime = T.matmul(T.concat_cols(heads, tape), layer.w_o, tape)
        u_prime = T.dropout(u_prime, dropout_p, training, rng, tape)
        u = T.layer_norm(T.add(x, u_prime, tape), layer.gamma1, layer.beta1, tape=tape)
        z_prime = T.matmul(T.relu(T.matmul(u, layer.w_ffn1, tape), tape), layer.w_ffn2, tape)
        z_prime = T.dropout(z_prime, dropout_p, training, rng, tape)
        x = T.layer_norm(T.add(u, z_prime, tape), layer.gamma2, layer.beta2, tape=tape)
    if capture is not None:
        capture["attention"] = maps
    return x


def attention_maps(x: Tensor, params: EncoderParams) -> list[list[Tensor]]:
    """Attention maps from an eval-mode forward pass, per layer then head."""
    capture: dict = {}
    encode(x, params, training=False, capture=capture)
    return capture["attention"]
