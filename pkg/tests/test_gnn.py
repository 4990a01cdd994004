import math

import numpy as np
import pytest

from convemo import tensor as T
from convemo.gnn import (
    GraphTransformerParams,
    RgcnParams,
    bypass_gnn,
    graph_transformer_forward,
    neighborhood_mask,
    rgcn_forward,
)
from convemo.graph import ConversationGraph, graph_from_speakers
from convemo.tensor import Tape, Tensor, backward
from helpers import FD_TOL, check_grads


def rgcn_loop_oracle(z, g, theta_root, thetas):
    """Literal per-node, per-relation double sum."""
    n = z.shape[0]
    out = np.zeros((n, theta_root.shape[1]))
    for i in range(n):
        out[i] = z[i] @ theta_root
        for r in range(len(thetas)):
            nbrs = [src for (src, dst, rel) in g.edges if dst == i and rel == r]
            if not nbrs:
                continue
            acc = np.zeros(theta_root.shape[1])
            for j in nbrs:
                acc += z[j] @ thetas[r]
            out[i] += acc / len(nbrs)
    return out


def gt_loop_oracle(x, g, params):
    """Per-node attention over unique in-neighbors, one head at a time."""
    n = x.shape[0]
    head_outs = []
    for head in params.heads:
        w1, w2 = head.w_self.data, head.w_msg.data
        w3, w4 = head.w_key_self.data, head.w_key_nbr.data
        out = np.zeros((n, w1.shape[1]))
        for i in range(n):
            out[i] = x[i] @ w1
            nbrs = sorted({src for (src, dst, _) in g.edges if dst == i})
            if not nbrs:
                continue
            scores = np.array([(x[i] @ w3) @ (x[j] @ w4) for j in nbrs])
            scores = scores / math.sqrt(params.head_dim)
            e = np.exp(scores - scores.max())
            alpha = e / e.sum()
            for a, j in zip(alpha, nbrs):
                out[i] += a * (x[j] @ w2)
        head_outs.append(out)
    return np.concatenate(head_outs, axis=1) @ params.w_out.data


def _random_graph(rng, n, m, **kw):
    speakers = rng.integers(0, m, size=n).tolist()
    past = [0, 1, 2, None][rng.integers(0, 4)]
    future = [0, 1, 2, None][rng.integers(0, 4)]
    mode = ("both_directions", "single_direction")[rng.integers(0, 2)]
    loops = bool(rng.integers(0, 2))
    return graph_from_speakers(speakers, m, past, future, mode, loops)


def test_rgcn_edgeless_identity():
    g = ConversationGraph(3, [], 2)
    params = RgcnParams(theta_root=T.parameter(np.eye(4)),
                        thetas=[T.parameter(np.zeros((4, 4))) for _ in range(2)])
    z = np.random.default_rng(0).standard_normal((3, 4))
    out = rgcn_forward(Tensor(z), g, params)
    np.testing.assert_array_equal(out.data, z)


def test_rgcn_single_message():
    g = ConversationGraph(2, [(0, 1, 1)], 3)
    params = RgcnParams(theta_root=T.parameter(np.zeros((3, 3))),
                        thetas=[T.parameter(np.zeros((3, 3))),
                                T.parameter(np.eye(3)),
                                T.parameter(np.zeros((3, 3)))])
    z = np.random.default_rng(1).standard_normal((2, 3))
    out = rgcn_forward(Tensor(z), g, params)
    np.testing.assert_allclose(out.data[1], z[0], atol=1e-15)
    np.testing.assert_array_equal(out.data[0], np.zeros(3))


@pytest.mark.parametrize("seed", range(10))
def test_rgcn_matches_loop_oracle(seed):
    rng = np.random.default_rng(300 + seed)
    n, m = int(rng.integers(1, 7)), int(rng.integers(1, 4))
    g = _random_graph(rng, n, m)
    params = RgcnParams.init(4, 5, g.relation_count, rng)
    z = rng.standard_normal((n, 4))
    got = rgcn_forward(Tensor(z), g, params).data
    want = rgcn_loop_oracle(z, g, params.theta_root.data,
                            [t.data for t in params.thetas])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_rgcn_relation_id_beyond_params():
    g = ConversationGraph(2, [(0, 1, 5)], 6)
    rng = np.random.default_rng(2)
    params = RgcnParams.init(3, 3, 2, rng)
    with pytest.raises(ValueError, match="relation id 5"):
        rgcn_forward(Tensor(rng.standard_normal((2, 3))), g, params)


def test_rgcn_linearity():
    rng = np.random.default_rng(3)
    g = _random_graph(rng, 5, 2)
    params = RgcnParams.init(4, 4, g.relation_count, rng)
    z = rng.standard_normal((5, 4))
    one = rgcn_forward(Tensor(z), g, params).data
    scaled = rgcn_forward(Tensor(3.5 * z), g, params).data
    np.testing.assert_allclose(scaled, 3.5 * one, atol=1e-12)


def test_gt_isolated_node_keeps_self_term():
    g = ConversationGraph(2, [(0, 1, 0)], 1)  # node 0 has no in-edges
    rng = np.random.default_rng(4)
    params = GraphTransformerParams.init(3, 4, 2, rng)
    x = rng.standard_normal((2, 3))
    out = graph_transformer_forward(Tensor(x), g, params).data
    per_head = [x[0] @ h.w_self.data for h in params.heads]
    want0 = np.concatenate(per_head) @ params.w_out.data
    np.testing.assert_allclose(out[0], want0, atol=1e-12)


def test_gt_single_neighbor_attention_is_one():
    g = ConversationGraph(2, [(0, 1, 0)], 1)
    rng = np.random.default_rng(5)
    params = GraphTransformerParams.init(3, 3, 1, rng)
    capture = {}
    x = rng.standard_normal((2, 3))
    graph_transformer_forward(Tensor(x), g, params, capture=capture)
    alpha = capture["graph_attention"][0].data
    assert alpha[1, 0] == 1.0
    assert alpha[0].sum() == 0.0  # isolated node row


@pytest.mark.parametrize("seed", range(10))
def test_gt_matches_loop_oracle(seed):
    rng = np.random.default_rng(400 + seed)
    n, m = int(rng.integers(1, 7)), int(rng.integers(1, 4))
    g = _random_graph(rng, n, m)
    params = GraphTransformerParams.init(4, 6, int(rng.integers(1, 4)), rng)
    x = rng.standard_normal((n, 4))
    got = graph_transformer_forward(Tensor(x), g, params).data
    want = gt_loop_oracle(x, g, params)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_gt_attention_rows_sum_to_one_over_neighborhoods():
    rng = np.random.default_rng(6)
    g = graph_from_speakers(rng.integers(0, 2, size=6).tolist(), 2, 2, 2)
    params = GraphTransformerParams.init(4, 4, 2, rng)
    capture = {}
    graph_transformer_forward(Tensor(rng.standard_normal((6, 4))), g, params,
                              capture=capture)
    mask = neighborhood_mask(g)
    for alpha in capture["graph_attention"]:
        sums = alpha.data.sum(axis=1)
        for i in range(6):
            if mask[i].any():
                assert abs(sums[i] - 1.0) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_graph_level_permutation_equivariance(seed):
    rng = np.random.default_rng(500 + seed)
    n = int(rng.integers(2, 7))
    speakers = rng.integers(0, 2, size=n).tolist()
    g = graph_from_speakers(speakers, 2, 2, 2)
    rgcn = RgcnParams.init(4, 4, g.relation_count, rng)
    gt = GraphTransformerParams.init(4, 4, 2, rng)
    x = rng.standard_normal((n, 4))

    perm = rng.permutation(n)
    inv = np.empty(n, dtype=int)
    inv[perm] = np.arange(n)
    # relabel node i as inv[i] so row inv[i] of the permuted input is x[i]
    g_perm = ConversationGraph(n, [(int(inv[s]), int(inv[d]), r) for s, d, r in g.edges],
                               g.relation_count)

    def run(feats, graph):
        hid = rgcn_forward(Tensor(feats), graph, rgcn)
        return graph_transformer_forward(hid, graph, gt).data

    out = run(x, g)
    out_perm = run(x[perm], g_perm)
    np.testing.assert_allclose(out_perm, out[perm], atol=1e-9)


def test_bypass_is_identity_and_transparent_to_grads():
    rng = np.random.default_rng(7)
    z = T.parameter(rng.standard_normal((3, 4)))
    assert bypass_gnn(z) is z
    tape = Tape()
    loss = T.sum_all(bypass_gnn(z), tape)
    backward(loss, tape)
    np.testing.assert_array_equal(z.grad, np.ones((3, 4)))


@pytest.mark.parametrize("seed", range(3))
def test_gnn_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(600 + seed)
    n = 4
    g = graph_from_speakers(rng.integers(0, 2, size=n).tolist(), 2, 1, 1)
    rgcn = RgcnParams.init(3, 3, g.relation_count, rng)
    gt = GraphTransformerParams.init(3, 3, 2, rng)
    z = T.parameter(rng.standard_normal((n, 3)))
    w = Tensor(rng.standard_normal((n, 3)))
    groups = [z] + list(rgcn.named().values()) + list(gt.named().values())

    def build(tape):
        hid = rgcn_forward(z, g, rgcn, tape)
        out = graph_transformer_forward(hid, g, gt, tape=tape)
        return T.sum_all(T.mul(out, w, tape), tape)

    err = check_grads(build, groups)
    assert err < FD_TOL, f"gnn rel err {err:.3e}"


def test_node_count_mismatch():
    rng = np.random.default_rng(8)
    g = graph_from_speakers([0, 1, 0], 2, 1, 1)
    params = RgcnParams.init(3, 3, g.relation_count, rng)
    with pytest.raises(T.ShapeError):
        rgcn_forward(Tensor(rng.standard_normal((2, 3))), g, params)
