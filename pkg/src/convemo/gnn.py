"""Graph layers over the conversation graph.

``rgcn_forward`` is a plain relational graph convolution: a root
transform of each node plus, for every relation type, the mean of the
type's in-neighbor features pushed through that type's own weight
matrix. ``graph_transformer_forward`` then runs dot-product attention
restricted to graph neighborhoods (relation types ignored at this
layer), combining a transformed self term with attention-weighted
neighbor messages; multiple heads are concatenated and projected.

``bypass_gnn`` is the identity, so the "no graph layers" ablation is an
ordinary pipeline configuration rather than a special case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import head_width
from .graph import ConversationGraph
from .tensor import Tape, Tensor


@dataclass
class RgcnParams:
    theta_root: Tensor          # d x d'
    thetas: list[Tensor]        # one d x d' matrix per relation type

    @property
    def relation_count(self) -> int:
        return len(self.thetas)

    @classmethod
    def init(cls, d_in: int, d_out: int, relation_count: int,
             rng: np.random.Generator) -> "RgcnParams":
        if relation_count < 1:
            raise ValueError("need at least one relation type")
        return cls(
            theta_root=T.parameter(T.xavier_uniform((d_in, d_out), rng)),
            thetas=[T.parameter(T.xavier_uniform((d_in, d_out), rng))
                    for _ in range(relation_count)],
        )

    def named(self, prefix: str = "rgcn") -> dict[str, Tensor]:
        out = {f"{prefix}.theta_root": self.theta_root}
        for r, th in enumerate(self.thetas):
            out[f"{prefix}.theta_rel{r}"] = th
        return out


@dataclass
class GraphTransformerHead:
    w_self: Tensor   # d' x k   (transform of the node itself)
    w_msg: Tensor    # d' x k   (transform of attended neighbors)
    w_key_self: Tensor   # d' x k  (query side of the dot product)
    w_key_nbr: Tensor    # d' x k  (key side)


@dataclass
class GraphTransformerParams:
    heads: list[GraphTransformerHead]
    w_out: Tensor    # (k*H) x d''
    head_dim: int

    @classmethod
    def init(cls, d_in: int, d_out: int, num_heads: int,
             rng: np.random.Generator) -> "GraphTransformerParams":
        if num_heads < 1:
            raise ValueError("need at least one attention head")
        k = head_width(d_out, num_heads)
        heads = [GraphTransformerHead(
            w_self=T.parameter(T.xavier_uniform((d_in, k), rng)),
            w_msg=T.parameter(T.xavier_uniform((d_in, k), rng)),
            w_key_self=T.parameter(T.xavier_uniform((d_in, k), rng)),
            w_key_nbr=T.parameter(T.xavier_uniform((d_in, k), rng)),
        ) for _ in range(num_heads)]
        return cls(heads, T.parameter(T.xavier_uniform((k * num_heads, d_out), rng)), k)

    def named(self, prefix: str = "graph_attention") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for h, head in enumerate(self.heads):
            out[f"{prefix}.head{h}.w_self"] = head.w_self
            out[f"{prefix}.head{h}.w_msg"] = head.w_msg
            out[f"{prefix}.head{h}.w_key_self"] = head.w_key_self
            out[f"{prefix}.head{h}.w_key_nbr"] = head.w_key_nbr
        out[f"{prefix}.w_out"] = self.w_out
        return out


def _check_nodes(x: Tensor, g: ConversationGraph, name: str) -> None:
    if x.shape[0] != g.num_nodes:
        raise T.ShapeError(f"{name}: {x.shape[0]} feature rows for "
                           f"{g.num_nodes} graph nodes")


def _relation_adjacency(g: ConversationGraph) -> dict[int, np.ndarray]:
    """Per relation type, the in-neighbor averaging matrix A_r with
    A_r[i, j] = 1/|N_r(i)| for every edge (j -> i) of type r."""
    mats: dict[int, np.ndarray] = {}
    for src, dst, rel in g.edges:
        mats.setdefault(rel, np.zeros((g.num_nodes, g.num_nodes)))[dst, src] += 1.0
    for rel, mat in mats.items():
        deg = mat.sum(axis=1, keepdims=True)
        np.divide(mat, deg, out=mat, where=deg > 0)
    return mats


def rgcn_forward(z: Tensor, g: ConversationGraph, params: RgcnParams,
                 tape: Tape | None = None) -> Tensor:
    """theta_root z_i plus per-relation mean of transformed in-neighbors."""
    _check_nodes(z, g, "rgcn_forward")
    if g.edges:
        max_rel = max(rel for _, _, rel in g.edges)
        if max_rel >= params.relation_count:
            raise ValueError(f"graph uses relation id {max_rel} but parameters "
                             f"cover only {params.relation_count} types")
    out = T.matmul(z, params.theta_root, tape)
    for rel, adj in sorted(_relation_adjacency(g).items()):
        msg = T.matmul(Tensor(adj), T.matmul(z, params.thetas[rel], tape), tape)
        out = T.add(out, msg, tape)
    return out


def neighborhood_mask(g: ConversationGraph) -> np.ndarray:
    """mask[i, j] is true when j is an in-neighbor of i (any relation type)."""
    mask = np.zeros((g.num_nodes, g.num_nodes), dtype=bool)
    for src, dst, _ in g.edges:
        mask[dst, src] = True
    return mask


def graph_transformer_forward(xp: Tensor, g: ConversationGraph,
                              params: GraphTransformerParams,
                              training: bool = False,
                              tape: Tape | None = None,
                              capture: dict | None = None) -> Tensor:
    """Self transform plus attention-weighted neighbor messages per head.

    Attention normalizes over each node's in-neighborhood; nodes with no
    in-edges keep only the self term.
    """
    _check_nodes(xp, g, "graph_transformer_forward")
    mask = neighborhood_mask(g)
    scale = 1.0 / math.sqrt(params.head_dim)
    outs = []
    alphas = []
    for head in params.heads:
        queries = T.matmul(xp, head.w_key_self, tape)
        keys = T.matmul(xp, head.w_key_nbr, tape)
        scores = T.mul_scalar(T.matmul(queries, T.transpose(keys, tape), tape), scale, tape)
        alpha = T.masked_softmax_rows(scores, mask, tape)
        alphas.append(alpha)
        messages = T.matmul(alpha, T.matmul(xp, head.w_msg, tape), tape)
        outs.append(T.add(T.matmul(xp, head.w_self, tape), messages, tape))
    if capture is not None:
        capture["graph_attention"] = alphas
    return T.matmul(T.concat_cols(outs, tape), params.w_out, tape)


def bypass_gnn(z: Tensor) -> Tensor:
    """Identity: context features go straight to the classifier."""
    return z
