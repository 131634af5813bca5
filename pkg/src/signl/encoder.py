"""Vision graph-convolution pyramid encoder, projection head, classifier head.

A pyramid layer computes M = multi_head(S @ H @ theta) and returns
relu(M) + skip(H), where skip is identity when the width is unchanged
and a learnable linear projection when the width halves.  The per-layer
width reduction lives in the multi-head transform; theta stays square.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorgrad as tg
from .featio import ConfigError
from .graphbuild import GraphView


def normalized_adjacency(edges, n, dtype=np.float32):
    """Symmetrically normalized adjacency with self-loops (dense N x N)."""
    a = np.zeros((n, n), dtype=np.float64)
    for src, dst in edges:
        a[src, dst] = 1.0
        a[dst, src] = 1.0
    np.fill_diagonal(a, 0.0)
    a_hat = a + np.eye(n)
    d = a_hat.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    s = a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]
    return s.astype(dtype)


def gcn_layer(h: tg.Tensor, s: tg.Tensor, theta: tg.Tensor) -> tg.Tensor:
    """Pre-activation graph convolution S @ H @ theta."""
    return tg.matmul(tg.matmul(s, h), theta)


def multi_head_transform(h: tg.Tensor, weights) -> tg.Tensor:
    """Split rows into contiguous chunks, map each by its head weight, concat."""
    kh = len(weights)
    d = h.shape[1]
    if d % kh != 0:
        raise ConfigError(f"{kh} heads do not divide input dim {d}")
    chunk = d // kh
    for w in weights:
        if w.shape[0] != chunk:
            raise ConfigError(f"head weight {w.shape} does not match chunk {chunk}")
    if kh == 1:
        return tg.matmul(h, weights[0])
    parts = tg.split(h, [chunk] * kh, axis=1)
    return tg.concat([tg.matmul(p, w) for p, w in zip(parts, weights)], axis=1)


def head_count_for(d_in, d_out, preferred):
    """Largest head count <= preferred dividing both dims (pyramid tail shrinks)."""
    kh = max(1, preferred)
    while d_in % kh or d_out % kh:
        kh -= 1
    return kh


@dataclass
class LayerParams:
    theta: tg.Tensor            # d_in x d_in
    heads: list                 # per-head (d_in/Kh) x (d_out/Kh)
    skip: tg.Tensor | None      # d_in x d_out, None when d_in == d_out


@dataclass
class EncoderStack:
    layers: list
    dims: list = field(default_factory=list)   # [d_0, ..., d_L]


def pyramid_dims(d0, n_layers):
    dims = [d0]
    for _ in range(n_layers):
        if dims[-1] % 2 != 0 and dims[-1] != 1:
            raise ConfigError(f"pyramid width {dims[-1]} is not halvable")
        dims.append(max(1, dims[-1] // 2))
    return dims


def _glorot(rng, shape, dtype):
    fan_in, fan_out = shape
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return (std * rng.standard_normal(shape)).astype(dtype)


def init_encoder(store: tg.ParamStore, prefix, d0, n_layers, heads, rng,
                 dtype=np.float32) -> EncoderStack:
    dims = pyramid_dims(d0, n_layers)
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        kh = head_count_for(d_in, d_out, heads)
        theta = store.add(f"{prefix}.layer{i}.theta",
                          tg.Tensor(_glorot(rng, (d_in, d_in), dtype), requires_grad=True))
        head_ws = [store.add(f"{prefix}.layer{i}.head{j}.w",
                             tg.Tensor(_glorot(rng, (d_in // kh, d_out // kh), dtype),
                                       requires_grad=True))
                   for j in range(kh)]
        skip = None
        if d_in != d_out:
            skip = store.add(f"{prefix}.layer{i}.skip.w",
                             tg.Tensor(_glorot(rng, (d_in, d_out), dtype), requires_grad=True))
        layers.append(LayerParams(theta=theta, heads=head_ws, skip=skip))
    return EncoderStack(layers=layers, dims=dims)


def vision_gc_layer(h: tg.Tensor, s: tg.Tensor, layer: LayerParams) -> tg.Tensor:
    m = multi_head_transform(gcn_layer(h, s, layer.theta), layer.heads)
    residual = h if layer.skip is None else tg.matmul(h, layer.skip)
    return tg.add(tg.relu(m), residual)


def run_layers(h: tg.Tensor, s: tg.Tensor, stack: EncoderStack) -> tg.Tensor:
    for layer in stack.layers:
        h = vision_gc_layer(h, s, layer)
    return h


def concat_pool(h: tg.Tensor, nodes_per_graph: int) -> tg.Tensor:
    """Concatenate node embeddings in index order, one row per graph."""
    m, d = h.shape
    if m % nodes_per_graph != 0:
        raise ConfigError("row count not a multiple of nodes_per_graph")
    return tg.reshape(h, (m // nodes_per_graph, nodes_per_graph * d))


def encode(g: GraphView, stack: EncoderStack) -> tg.Tensor:
    """Full per-graph encoding: layers then CONCAT pooling (1 x N*d_L)."""
    n, d = g.x.shape
    if d != stack.dims[0]:
        raise tg.ShapeError(f"node dim {d} does not match stack input {stack.dims[0]}")
    s = tg.Tensor._wrap(normalized_adjacency(g.edges, n), False)
    h = tg.Tensor._wrap(g.x.astype(np.float32), False)
    return concat_pool(run_layers(h, s, stack), n)


# ---------------------------------------------------------------------------
# MLP heads

def init_mlp(store: tg.ParamStore, prefix, dims, rng, dtype=np.float32):
    """Affine layer chain; dims = [in, h1, ..., out]."""
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        store.add(f"{prefix}.l{i}.w", tg.Tensor(_glorot(rng, (a, b), dtype), requires_grad=True))
        store.add(f"{prefix}.l{i}.b",
                  tg.Tensor(np.zeros((1, b), dtype=dtype), requires_grad=True))


def run_mlp(x: tg.Tensor, store: tg.ParamStore, prefix, n_layers=3) -> tg.Tensor:
    """ReLU between affine layers, none after the last."""
    for i in range(n_layers):
        x = tg.affine(x, store[f"{prefix}.l{i}.w"], store[f"{prefix}.l{i}.b"])
        if i < n_layers - 1:
            x = tg.relu(x)
    return x


def project(h_t: tg.Tensor, h_s: tg.Tensor, store: tg.ParamStore) -> tg.Tensor:
    return run_mlp(tg.concat([h_t, h_s], axis=1), store, "proj")


def classify(parts, store: tg.ParamStore) -> tg.Tensor:
    """Logits (B x 2) from the view embeddings that are in use."""
    x = parts[0] if len(parts) == 1 else tg.concat(parts, axis=1)
    return run_mlp(x, store, "cls")


def softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
