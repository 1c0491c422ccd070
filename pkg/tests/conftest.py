"""Shared fixtures: random taxonomies, graphs, and a finite-difference helper."""

from __future__ import annotations

import numpy as np
import pytest

from hgclassify.graph_encoder import Activation, EncoderParams, LayerParams
from hgclassify.hierarchy import Taxonomy, build_graph


def random_taxonomy(rng: np.random.Generator, max_levels: int = 4, max_nodes: int = 20) -> Taxonomy:
    """Random valid taxonomy: every non-leaf keeps at least one child."""
    levels = int(rng.integers(1, max_levels + 1))
    sizes = [int(rng.integers(1, 4))]
    for _ in range(levels - 1):
        grow = int(rng.integers(0, 4))
        sizes.append(min(sizes[-1] + grow, max_nodes))
    while sum(sizes) > max_nodes and len(sizes) > 1:
        sizes.pop()
    levels = len(sizes)

    names = [tuple(f"n{i}_{j}" for j in range(k)) for i, k in enumerate(sizes)]
    parent_of = []
    for i in range(1, levels):
        k_prev, k = sizes[i - 1], sizes[i]
        links = list(rng.integers(0, k_prev, size=k))
        # Guarantee surjectivity so no parent is childless.
        slots = rng.permutation(k)[:k_prev]
        for parent, slot in enumerate(slots):
            links[slot] = parent
        parent_of.append(tuple(int(p) for p in links))
    return Taxonomy(levels=levels, names=tuple(names), parent_of=tuple(parent_of))


def random_graph(rng: np.random.Generator, max_levels: int = 4, max_nodes: int = 20):
    return build_graph(random_taxonomy(rng, max_levels, max_nodes))


def random_encoder_params(
    rng: np.random.Generator,
    variant: str,
    depth: int,
    dim: int,
    activation: Activation = Activation("leaky_relu", 0.2),
    scale: float = 0.6,
) -> EncoderParams:
    """Fully random weights (unlike the near-identity production init)."""
    layers = []
    for _ in range(depth):
        layers.append(
            LayerParams(
                weight=(scale * rng.normal(size=(dim, dim))).astype(np.float32),
                attn=(scale * rng.normal(size=2 * dim)).astype(np.float32) if variant == "gat" else None,
                weight_nbr=(scale * rng.normal(size=(dim, dim))).astype(np.float32) if variant == "sage" else None,
            )
        )
    return EncoderParams(variant=variant, layers=layers, activation=activation)


def fd_gradient(fn, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for j in range(x.size):
        hi = x.copy()
        hi.reshape(-1)[j] += step
        lo = x.copy()
        lo.reshape(-1)[j] -= step
        flat[j] = (fn(hi) - fn(lo)) / (2 * step)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@pytest.fixture
def two_level_taxonomy() -> Taxonomy:
    return Taxonomy(
        levels=2,
        names=(("animal", "vehicle"), ("dog", "cat", "car")),
        parent_of=((0, 0, 1),),
    )


@pytest.fixture
def chain_taxonomy() -> Taxonomy:
    return Taxonomy(levels=3, names=(("a",), ("b",), ("c",)), parent_of=((0,), (0,)))


# --- brute-force encoder oracles shared by unit and acceptance tests ---

def apply_activation(x, act: Activation):
    slope = act.effective_slope
    return np.where(x > 0, x, slope * x)


def gcn_oracle(x, weight, graph, act):
    """Dense normalized-adjacency route: (A_hat @ x) @ theta, then activation."""
    a_hat = graph.adjacency.astype(float) + np.eye(graph.node_count)
    a_hat /= a_hat.sum(axis=1, keepdims=True)
    return apply_activation((a_hat @ x) @ weight, act)


def gat_oracle(x, weight, attn, graph, act, slope=0.2):
    """Per-edge loop: score, softmax with max subtraction, weighted sum."""
    n = graph.node_count
    z = x @ weight
    d = weight.shape[0]
    out = np.zeros_like(z)
    for v in range(n):
        nbrs = [u for u in range(n) if graph.adjacency[v, u]] + [v]
        scores = []
        for u in nbrs:
            e = attn[:d] @ z[v] + attn[d:] @ z[u]
            scores.append(e if e > 0 else slope * e)
        scores = np.array(scores)
        w = np.exp(scores - scores.max())
        w /= w.sum()
        for weight_u, u in zip(w, nbrs):
            out[v] += weight_u * z[u]
    return apply_activation(out, act)


def sage_oracle(x, w_self, w_nbr, graph, act):
    n = graph.node_count
    out = np.zeros((n, w_self.shape[1]))
    for v in range(n):
        nbrs = [u for u in range(n) if graph.adjacency[v, u]]
        agg = np.mean([x[u] for u in nbrs], axis=0) if nbrs else np.zeros(x.shape[1])
        out[v] = x[v] @ w_self + agg @ w_nbr
    return apply_activation(out, act)


def encode_oracle(x, params, graph):
    h = np.asarray(x, dtype=float)
    for layer in params.layers:
        if params.variant == "gcn":
            h = gcn_oracle(h, layer.weight.astype(float), graph, params.activation)
        elif params.variant == "gat":
            h = gat_oracle(
                h, layer.weight.astype(float), layer.attn.astype(float), graph,
                params.activation, params.attn_slope,
            )
        else:
            h = sage_oracle(
                h, layer.weight.astype(float), layer.weight_nbr.astype(float), graph,
                params.activation,
            )
    return h
