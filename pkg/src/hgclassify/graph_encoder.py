"""Multi-layer graph encoders over hierarchy graphs.

Three message-passing variants share one structure: linear transform, a
neighborhood aggregation, then an activation after every layer (including
the last). GCN and GAT aggregate over the closed neighborhood (the node's
own previous embedding always participates); GraphSAGE keeps separate self
and neighbor weights with an open-neighborhood mean. All forward math runs
on the autodiff tape, so backward passes are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .errors import ShapeError, StateError, ValidationError
from .hierarchy import HierGraph
from .tape import Tensor

GCN = "gcn"
GAT = "gat"
SAGE = "sage"
VARIANTS = (GCN, GAT, SAGE)

RELU = "relu"
LEAKY_RELU = "leaky_relu"
IDENTITY = "identity"


@dataclass(frozen=True)
class Activation:
    kind: str = IDENTITY
    slope: float = 0.2

    def __post_init__(self):
        if self.kind not in (RELU, LEAKY_RELU, IDENTITY):
            raise ValidationError(f"unknown activation {self.kind!r}")
        if self.kind == LEAKY_RELU and not 0 < self.slope < 1:
            raise ValidationError("leaky_relu slope must lie in (0, 1)")

    @property
    def effective_slope(self) -> float:
        return {RELU: 0.0, LEAKY_RELU: self.slope, IDENTITY: 1.0}[self.kind]


@dataclass
class LayerParams:
    """One layer's weights; ``attn`` only for GAT, ``weight_nbr`` only for SAGE."""

    weight: np.ndarray
    attn: np.ndarray | None = None
    weight_nbr: np.ndarray | None = None


@dataclass
class EncoderParams:
    variant: str
    layers: list[LayerParams]
    activation: Activation = Activation()
    attn_slope: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown encoder variant {self.variant!r}")
        if not self.layers:
            raise ValidationError("encoder depth must be >= 1")
        dim = self.layers[0].weight.shape[0]
        for i, layer in enumerate(self.layers):
            if layer.weight.shape != (dim, dim) or not np.all(np.isfinite(layer.weight)):
                raise ValidationError(f"layer {i}: weight must be a finite {dim}x{dim} matrix")
            if self.variant == GAT:
                if layer.attn is None or layer.attn.shape != (2 * dim,):
                    raise ValidationError(f"layer {i}: gat needs a length-{2 * dim} attention vector")
            if self.variant == SAGE:
                if layer.weight_nbr is None or layer.weight_nbr.shape != (dim, dim):
                    raise ValidationError(f"layer {i}: sage needs a {dim}x{dim} neighbor weight")
        if self.variant == GAT and not 0 < self.attn_slope < 1:
            raise ValidationError("gat attention slope must lie in (0, 1)")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].weight.shape[0]


def init_params(
    variant: str,
    depth: int,
    dim: int,
    rng: np.random.Generator,
    activation: Activation = Activation(),
    noise: float = 0.1,
) -> EncoderParams:
    """Near-identity seeded initialization.

    Weights start at the identity plus noise*uniform(-1/sqrt(D), 1/sqrt(D));
    attention vectors start at the same small scale (near-uniform attention),
    so an untrained encoder is structural smoothing that preserves the
    alignment between the modalities. A fully random init scrambles that
    alignment and costs more than the training budget recovers.
    """
    bound = noise / np.sqrt(dim)

    def u(shape):
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    layers = []
    for _ in range(depth):
        layers.append(
            LayerParams(
                weight=(np.eye(dim, dtype=np.float32) + u((dim, dim))).astype(np.float32),
                attn=u((2 * dim,)) if variant == GAT else None,
                weight_nbr=u((dim, dim)) if variant == SAGE else None,
            )
        )
    return EncoderParams(variant=variant, layers=layers, activation=activation)


@dataclass
class GraphMats:
    """Dense structure matrices derived from a HierGraph, cached per graph."""

    closed_mean: np.ndarray
    closed_mask: np.ndarray = field(repr=False)
    open_mean: np.ndarray = field(repr=False)


def graph_mats(graph: HierGraph) -> GraphMats:
    a = graph.adjacency.astype(np.float64)
    closed = a + np.eye(graph.node_count)
    closed_mean = closed / closed.sum(axis=1, keepdims=True)
    degrees = a.sum(axis=1, keepdims=True)
    open_mean = np.divide(a, degrees, out=np.zeros_like(a), where=degrees > 0)
    return GraphMats(closed_mean=closed_mean, closed_mask=closed.astype(bool), open_mean=open_mean)


def _activate(x: Tensor, act: Activation) -> Tensor:
    if act.kind == IDENTITY:
        return x
    return tape.leaky(x, act.effective_slope)


def gcn_layer_t(x: Tensor, weight: Tensor, mats: GraphMats, act: Activation) -> Tensor:
    z = tape.matmul(x, weight)
    return _activate(tape.matmul(tape.constant(mats.closed_mean), z), act)


def gat_layer_t(
    x: Tensor,
    weight: Tensor,
    attn: Tensor,
    mats: GraphMats,
    act: Activation,
    attn_slope: float,
) -> Tensor:
    dim = weight.shape[0]
    z = tape.matmul(x, weight)
    a_col = tape.reshape(attn, (2 * dim, 1))
    s_self = tape.matmul(z, tape.slice_rows(a_col, 0, dim))
    s_other = tape.matmul(z, tape.slice_rows(a_col, dim, 2 * dim))
    scores = tape.leaky(tape.add(s_self, tape.transpose(s_other)), attn_slope)
    coeffs = tape.softmax_rows(scores, mask=mats.closed_mask)
    return _activate(tape.matmul(coeffs, z), act)


def sage_layer_t(
    x: Tensor, weight: Tensor, weight_nbr: Tensor, mats: GraphMats, act: Activation
) -> Tensor:
    own = tape.matmul(x, weight)
    nbr = tape.matmul(tape.constant(mats.open_mean), tape.matmul(x, weight_nbr))
    return _activate(tape.add(own, nbr), act)


def make_param_leaves(params: EncoderParams) -> list[dict[str, Tensor]]:
    """One leaf tensor per layer weight, for gradient collection and sharing."""
    leaves = []
    for layer in params.layers:
        record = {"weight": Tensor(layer.weight)}
        if params.variant == GAT:
            record["attn"] = Tensor(layer.attn)
        if params.variant == SAGE:
            record["weight_nbr"] = Tensor(layer.weight_nbr)
        leaves.append(record)
    return leaves


def encode_t(
    x: Tensor,
    params: EncoderParams,
    mats: GraphMats,
    param_leaves: list[dict] | None = None,
) -> Tensor:
    """Apply all layers on the tape, optionally reusing prebuilt leaf tensors."""
    leaves = param_leaves if param_leaves is not None else make_param_leaves(params)
    h = x
    for record in leaves:
        if params.variant == GCN:
            h = gcn_layer_t(h, record["weight"], mats, params.activation)
        elif params.variant == GAT:
            h = gat_layer_t(
                h, record["weight"], record["attn"], mats, params.activation, params.attn_slope
            )
        else:
            h = sage_layer_t(h, record["weight"], record["weight_nbr"], mats, params.activation)
    return h


def _check_features(features: np.ndarray, graph: HierGraph, dim: int) -> None:
    if features.ndim != 2 or features.shape != (graph.node_count, dim):
        raise ShapeError(
            f"features shape {features.shape} does not match {graph.node_count} nodes x {dim} dims"
        )


def gcn_layer(features, weight, graph: HierGraph, activation: Activation = Activation()) -> np.ndarray:
    """Single GCN layer: closed-neighborhood mean, linear map, activation."""
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
        raise ShapeError(f"weight must be square, got {weight.shape}")
    features = np.asarray(features, dtype=np.float64)
    _check_features(features, graph, weight.shape[0])
    return gcn_layer_t(Tensor(features), Tensor(weight), graph_mats(graph), activation).value


def gat_layer(
    features,
    weight,
    attn,
    graph: HierGraph,
    activation: Activation = Activation(),
    attn_slope: float = 0.2,
) -> np.ndarray:
    """Single-head GAT layer over the closed neighborhood."""
    weight = np.asarray(weight, dtype=np.float64)
    attn = np.asarray(attn, dtype=np.float64)
    if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
        raise ShapeError(f"weight must be square, got {weight.shape}")
    if attn.shape != (2 * weight.shape[0],):
        raise ShapeError(f"attention vector must have length {2 * weight.shape[0]}")
    features = np.asarray(features, dtype=np.float64)
    _check_features(features, graph, weight.shape[0])
    return gat_layer_t(
        Tensor(features), Tensor(weight), Tensor(attn), graph_mats(graph), activation, attn_slope
    ).value


def sage_layer(
    features, weight_self, weight_nbr, graph: HierGraph, activation: Activation = Activation()
) -> np.ndarray:
    """GraphSAGE mean layer: self map plus open-neighborhood mean map."""
    weight_self = np.asarray(weight_self, dtype=np.float64)
    weight_nbr = np.asarray(weight_nbr, dtype=np.float64)
    if weight_self.shape != weight_nbr.shape or weight_self.ndim != 2:
        raise ShapeError("self and neighbor weights must be square matrices of equal shape")
    features = np.asarray(features, dtype=np.float64)
    _check_features(features, graph, weight_self.shape[0])
    return sage_layer_t(
        Tensor(features), Tensor(weight_self), Tensor(weight_nbr), graph_mats(graph), activation
    ).value


def encode(features, params: EncoderParams, graph: HierGraph) -> np.ndarray:
    """Run the full encoder stack; returns the final node-feature table."""
    features = np.asarray(features, dtype=np.float64)
    _check_features(features, graph, params.dim)
    return encode_t(Tensor(features), params, graph_mats(graph)).value


class GraphEncoder:
    """Encoder with a cached forward pass for explicit backward calls."""

    def __init__(self, params: EncoderParams, graph: HierGraph):
        self.params = params
        self.graph = graph
        self.mats = graph_mats(graph)
        self._cache = None

    def forward(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        _check_features(features, self.graph, self.params.dim)
        x = Tensor(features)
        leaves = make_param_leaves(self.params)
        out = encode_t(x, self.params, self.mats, leaves)
        self._cache = (x, leaves, out)
        return out.value

    def backward(self, upstream) -> tuple[np.ndarray, list[dict]]:
        """Gradients w.r.t. the input features and every layer's weights."""
        if self._cache is None:
            raise StateError("backward called before forward")
        x, leaves, out = self._cache
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != out.value.shape:
            raise ShapeError(f"upstream shape {upstream.shape} != output shape {out.value.shape}")
        loss = tape.sum_all(tape.mul(out, tape.constant(upstream)))
        tape.backward(loss)
        grads = [{name: leaf.grad for name, leaf in record.items()} for record in leaves]
        return x.grad, grads
