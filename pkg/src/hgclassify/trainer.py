"""End-to-end training of the hierarchy-graph classification head.

The forward pipeline composes: prompted text features, an optional text
graph encoder, prompted spatial maps, class prototypes with an optional
visual graph encoder, prototype-attention fusion, pooling, and the weighted
two-branch logit combination. Each of the four stages can be toggled off
(it then passes its input through unchanged), which yields the component
ablation grid. All trainable parameters live on the float32 grid so
checkpoints round-trip bit-exactly; computation happens in float64.

Prototypes are rebuilt from the current prompted features at the start of
every epoch and treated as constants within it (no gradient flows through
the dataset-wide means).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tape
from .embeddings import (
    ImageRecord,
    PrototypeTable,
    TextTable,
    apply_visual_prompts,
    compute_prototypes,
)
from .errors import (
    DataError,
    FormatError,
    NaNError,
    RangeError,
    ShapeError,
    StateError,
    ValidationError,
)
from .fusion import (
    MULTI_LABEL,
    STRATEGIES,
    FusionConfig,
    LogitsBundle,
    attend_t,
    attention_map_t,
    combine_logits_t,
)
from .graph_encoder import (
    GAT,
    VARIANTS,
    Activation,
    EncoderParams,
    LayerParams,
    encode_t,
    graph_mats,
    init_params,
    make_param_leaves,
)
from .hierarchy import HierGraph
from .objective import LossConfig, batch_loss_t, default_level_weights
from .tape import Tensor

_ACT_KINDS = ("relu", "leaky_relu", "identity")


@dataclass(frozen=True)
class Toggles:
    """Stage switches: text prompts, text graph, visual prompts, visual graph."""

    tp: bool = True
    tg: bool = True
    vp: bool = True
    vg: bool = True

    def as_tuple(self) -> tuple[bool, bool, bool, bool]:
        return (self.tp, self.tg, self.vp, self.vg)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 3e-4
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    toggles: Toggles = Toggles()
    variant: str = GAT
    depth: int = 3
    activation: Activation = Activation()
    share_encoders: bool = False
    visual_prompt_rows: int = 4
    fusion: FusionConfig = FusionConfig()
    level_weights: tuple[float, ...] | None = None
    strategy: str = MULTI_LABEL
    lr_min: float = 0.0
    threads: int | None = None

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValidationError("initial learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch size must be >= 1")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown encoder variant {self.variant!r}")
        if self.depth < 1:
            raise ValidationError("encoder depth must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.visual_prompt_rows < 0:
            raise ValidationError("visual prompt row count must be >= 0")

    def loss_config(self, levels: int) -> LossConfig:
        weights = self.level_weights if self.level_weights is not None else default_level_weights(levels)
        if len(weights) != levels:
            raise ValidationError(f"{len(weights)} level weights for {levels} levels")
        return LossConfig(level_weights=tuple(float(w) for w in weights), strategy=self.strategy)


@dataclass
class ModelState:
    """All trainable parameters plus the cached prototype table."""

    text_offsets: np.ndarray
    visual_prompts: np.ndarray
    theta_t: EncoderParams
    theta_v: EncoderParams
    prototypes: PrototypeTable | None = None
    step: int = 0

    def param_blocks(
        self, toggles: Toggles, shared: bool, fusion_active: bool = True
    ) -> dict[str, np.ndarray]:
        """Active parameter blocks in a fixed order (bypassed stages excluded).

        With the fusion branch weighted zero, the visual graph encoder cannot
        receive gradient, so its blocks are excluded as well.
        """
        blocks: dict[str, np.ndarray] = {}
        if toggles.tp:
            blocks["text_offsets"] = self.text_offsets
        if toggles.vp and self.visual_prompts.shape[0] > 0:
            blocks["visual_prompts"] = self.visual_prompts
        vg_live = toggles.vg and fusion_active
        if shared:
            if toggles.tg or vg_live:
                _add_encoder_blocks(blocks, "theta_t", self.theta_t)
        else:
            if toggles.tg:
                _add_encoder_blocks(blocks, "theta_t", self.theta_t)
            if vg_live:
                _add_encoder_blocks(blocks, "theta_v", self.theta_v)
        return blocks


def _add_encoder_blocks(blocks: dict, prefix: str, params: EncoderParams) -> None:
    for i, layer in enumerate(params.layers):
        blocks[f"{prefix}.layer{i}.weight"] = layer.weight
        if layer.attn is not None:
            blocks[f"{prefix}.layer{i}.attn"] = layer.attn
        if layer.weight_nbr is not None:
            blocks[f"{prefix}.layer{i}.weight_nbr"] = layer.weight_nbr


def init_state(table: TextTable, cfg: TrainConfig, rng: np.random.Generator) -> ModelState:
    """Zero-initialized prompt offsets, small seeded visual prompt rows and weights.

    Offsets start at zero so the prompted text features begin exactly at the
    base table; visual prompt rows start small but nonzero because they are
    L2-normalized inside the fusion branch.
    """
    dim = table.dim
    bound = 1.0 / np.sqrt(dim)
    offsets = np.zeros((table.count, dim), dtype=np.float32)
    vprompts = rng.uniform(-bound, bound, size=(cfg.visual_prompt_rows, dim)).astype(np.float32)
    theta_t = init_params(cfg.variant, cfg.depth, dim, rng, cfg.activation)
    theta_v = theta_t if cfg.share_encoders else init_params(cfg.variant, cfg.depth, dim, rng, cfg.activation)
    return ModelState(
        text_offsets=offsets, visual_prompts=vprompts, theta_t=theta_t, theta_v=theta_v
    )


def cosine_lr(step: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from lr0 (step 0) down to lr_min (step total)."""
    if total < 1:
        raise RangeError("total steps must be >= 1")
    if not 0 <= step <= total:
        raise RangeError(f"step {step} outside 0..{total}")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * step / total))


def sgd_step(state: ModelState, gradients: dict[str, np.ndarray], lr: float) -> ModelState:
    """In-place p <- p - lr*g on every block present in ``gradients``."""
    blocks = {}
    _add_encoder_blocks(blocks, "theta_t", state.theta_t)
    if state.theta_v is not state.theta_t:
        _add_encoder_blocks(blocks, "theta_v", state.theta_v)
    blocks["text_offsets"] = state.text_offsets
    blocks["visual_prompts"] = state.visual_prompts
    for name, grad in gradients.items():
        if name not in blocks:
            raise ShapeError(f"gradient for unknown parameter block {name!r}")
        param = blocks[name]
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeError(f"gradient shape {grad.shape} != parameter shape {param.shape} ({name})")
        updated = (param.astype(np.float64) - lr * grad).astype(np.float32)
        if not np.all(np.isfinite(updated)):
            raise NaNError(f"non-finite values in parameter block {name!r} after update")
        param[...] = updated
    state.step += 1
    return state


class _BatchTape:
    """One tape over a batch of images.

    Records sharing a spatial shape are stacked and processed with a handful
    of matrix operations; the global mean of a prompted map decomposes into
    the data-row mean and the prompt-row mean, so prompt rows are never
    physically appended per sample.
    """

    def __init__(
        self,
        state: ModelState,
        records: list[ImageRecord],
        table: TextTable,
        graph: HierGraph,
        cfg: TrainConfig,
        overrides: dict[str, np.ndarray] | None = None,
    ):
        self.graph = graph
        self.cfg = cfg
        self.records = records
        overrides = overrides or {}
        tog = cfg.toggles
        lam2_active = cfg.fusion.lambda2 != 0.0
        self.leaves: dict[str, Tensor] = {}

        def leaf(name: str, array: np.ndarray) -> Tensor:
            t = Tensor(overrides.get(name, array))
            self.leaves[name] = t
            return t

        # Text branch (shared by every sample in the batch).
        base = tape.constant(table.base)
        if tog.tp:
            pre = tape.add(base, leaf("text_offsets", state.text_offsets))
        else:
            pre = base
        text_tilde = tape.l2norm_rows(pre)
        mats = graph_mats(graph)
        theta_t_leaves = None
        if tog.tg or (cfg.share_encoders and tog.vg and lam2_active):
            theta_t_leaves = self._encoder_leaves("theta_t", state.theta_t, overrides)
        if tog.tg:
            self.text_norm = tape.l2norm_rows(encode_t(text_tilde, state.theta_t, mats, theta_t_leaves))
        else:
            self.text_norm = text_tilde

        # Prototype branch (also shared; prototypes themselves are constants).
        self.proto_norm = None
        if lam2_active:
            if state.prototypes is None:
                raise StateError("prototypes must be computed before the fusion branch runs")
            protos = tape.constant(state.prototypes.values)
            if tog.vg:
                if cfg.share_encoders:
                    proto_hat = encode_t(protos, state.theta_t, mats, theta_t_leaves)
                else:
                    theta_v_leaves = self._encoder_leaves("theta_v", state.theta_v, overrides)
                    proto_hat = encode_t(protos, state.theta_v, mats, theta_v_leaves)
            else:
                proto_hat = protos
            self.proto_norm = tape.l2norm_rows(proto_hat)

        self.vprompts = None
        if tog.vp and state.visual_prompts.shape[0] > 0:
            self.vprompts = leaf("visual_prompts", state.visual_prompts)

        self.alpha = cfg.fusion.resolve_alpha(table.dim)
        groups: dict[int, list[int]] = {}
        for i, rec in enumerate(records):
            if rec.spatial.shape[1] != table.dim:
                raise ShapeError(f"record width {rec.spatial.shape[1]} != table width {table.dim}")
            groups.setdefault(rec.spatial.shape[0], []).append(i)
        self.logit_groups = [
            (np.array(idx, dtype=np.intp), self._group_logits([records[i] for i in idx]))
            for rows, idx in sorted(groups.items())
        ]

    def _encoder_leaves(self, prefix: str, params: EncoderParams, overrides: dict) -> list[dict]:
        leaves = make_param_leaves(params)
        for i, record in enumerate(leaves):
            for key in record:
                name = f"{prefix}.layer{i}.{key}"
                if name in overrides:
                    record[key] = Tensor(overrides[name])
                self.leaves[name] = record[key]
        return leaves

    def _fused_prompt_part(self) -> Tensor:
        psi = attention_map_t(tape.l2norm_rows(self.vprompts), self.proto_norm)
        return tape.mean_rows(attend_t(psi, self.proto_norm, self.alpha))

    def _group_logits(self, group: list[ImageRecord]) -> Tensor:
        rows = group[0].spatial.shape[0]
        v = self.vprompts.value.shape[0] if self.vprompts is not None else 0
        data_means = tape.constant(
            np.stack([rec.spatial.astype(np.float64).mean(axis=0) for rec in group])
        )
        if v:
            global_pre = tape.add(
                tape.scale(data_means, rows / (rows + v)),
                tape.scale(tape.mean_rows(self.vprompts), v / (rows + v)),
            )
        else:
            global_pre = data_means
        global_prompted = tape.l2norm_rows(global_pre)

        global_fused = None
        if self.proto_norm is not None:
            stack = tape.constant(np.concatenate([rec.spatial for rec in group], axis=0))
            psi = attention_map_t(tape.l2norm_rows(stack), self.proto_norm)
            fused = attend_t(psi, self.proto_norm, self.alpha)
            data_part = tape.block_mean_rows(fused, rows)
            if v:
                fused_pre = tape.add(
                    tape.scale(data_part, rows / (rows + v)),
                    tape.scale(self._fused_prompt_part(), v / (rows + v)),
                )
            else:
                fused_pre = data_part
            global_fused = tape.l2norm_rows(fused_pre)

        return combine_logits_t(
            global_prompted, global_fused, self.text_norm,
            self.cfg.fusion.lambda1, self.cfg.fusion.lambda2,
        )

    def logits_matrix(self) -> np.ndarray:
        """Scores for every record, in the original record order."""
        out = np.empty((len(self.records), self.graph.node_count))
        for idx, logits in self.logit_groups:
            out[idx] = logits.value
        return out

    def loss(self, loss_cfg: LossConfig) -> Tensor:
        """Summed loss over the batch (reduction by summation)."""
        labels = np.stack([rec.label_path for rec in self.records])
        total = None
        for idx, logits in self.logit_groups:
            term = batch_loss_t(
                logits, labels[idx], self.graph.taxonomy, self.graph.level_ranges, loss_cfg
            )
            total = term if total is None else tape.add(total, term)
        return total

    def collect_grads(self) -> dict[str, np.ndarray]:
        return {name: leaf.grad for name, leaf in self.leaves.items() if leaf.grad is not None}


def forward(
    state: ModelState,
    record: ImageRecord,
    table: TextTable,
    graph: HierGraph,
    cfg: TrainConfig,
) -> LogitsBundle:
    """Pipeline scores for one image under the configured toggles."""
    bt = _BatchTape(state, [record], table, graph, cfg)
    return LogitsBundle(
        scores=bt.logits_matrix()[0],
        level_ranges=graph.level_ranges,
        strategy=cfg.strategy,
    )


def forward_batch(
    state: ModelState,
    records: list[ImageRecord],
    table: TextTable,
    graph: HierGraph,
    cfg: TrainConfig,
) -> np.ndarray:
    """Score matrix (n x K) for a batch, sharing the per-batch branches."""
    return _BatchTape(state, records, table, graph, cfg).logits_matrix()


def refresh_prototypes(
    state: ModelState,
    records: list[ImageRecord],
    graph: HierGraph,
    cfg: TrainConfig,
) -> PrototypeTable:
    """Class prototypes from the current prompted features of the training set."""
    if cfg.toggles.vp and state.visual_prompts.shape[0] > 0:
        records = [apply_visual_prompts(r, state.visual_prompts) for r in records]
    return compute_prototypes(records, graph.taxonomy)


def fit(
    records: list[ImageRecord],
    table: TextTable,
    graph: HierGraph,
    cfg: TrainConfig,
) -> tuple[ModelState, list[dict]]:
    """Train on the given records; returns the final state and per-epoch metrics.

    Deterministic for a fixed seed: parameter init, batch order, and all
    arithmetic depend only on the config.
    """
    if not records:
        raise DataError("training set is empty")
    taxonomy = graph.taxonomy
    for rec in records:
        rec.validate_labels(taxonomy)
    if table.count != graph.node_count or table.dim != records[0].spatial.shape[1]:
        raise ShapeError("text table does not match the graph or the feature width")
    loss_cfg = cfg.loss_config(taxonomy.levels)

    rng = np.random.default_rng(cfg.seed)
    state = init_state(table, cfg, rng)
    needs_protos = cfg.fusion.lambda2 != 0.0
    metrics: list[dict] = []
    n = len(records)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)
        if needs_protos:
            state.prototypes = refresh_prototypes(state, records, graph, cfg)
        order = rng.permutation(n)
        epoch_loss = 0.0
        level_hits = np.zeros(taxonomy.levels, dtype=np.int64)
        for lo in range(0, n, cfg.batch_size):
            batch = [records[i] for i in order[lo : lo + cfg.batch_size]]
            bt = _BatchTape(state, batch, table, graph, cfg)
            loss = bt.loss(loss_cfg)
            tape.backward(loss)
            epoch_loss += float(loss.value)
            scores = bt.logits_matrix()
            labels = np.stack([rec.label_path for rec in batch])
            for i, (s, e) in enumerate(graph.level_ranges):
                level_hits[i] += int(np.sum(np.argmax(scores[:, s:e], axis=1) == labels[:, i]))
            sgd_step(state, bt.collect_grads(), lr)
        row = {"epoch": epoch, "lr": float(lr), "mean_loss": epoch_loss / n}
        for i in range(taxonomy.levels):
            row[f"top1_l{i + 1}"] = level_hits[i] / n
        metrics.append(row)
    if needs_protos:
        state.prototypes = refresh_prototypes(state, records, graph, cfg)
    return state, metrics


@dataclass
class GradBlockReport:
    name: str
    max_rel_err: float
    flagged: bool


@dataclass
class GradCheckReport:
    blocks: list[GradBlockReport] = field(default_factory=list)
    threshold: float = 1e-3

    @property
    def passed(self) -> bool:
        return all(not b.flagged for b in self.blocks)


def _analytic_grads(
    state: ModelState,
    record: ImageRecord,
    table: TextTable,
    graph: HierGraph,
    cfg: TrainConfig,
    loss_cfg: LossConfig,
) -> dict[str, np.ndarray]:
    bt = _BatchTape(state, [record], table, graph, cfg)
    tape.backward(bt.loss(loss_cfg))
    return bt.collect_grads()


def gradcheck(
    state: ModelState,
    record: ImageRecord,
    table: TextTable,
    graph: HierGraph,
    cfg: TrainConfig,
    step: float = 1e-4,
    threshold: float = 1e-3,
) -> GradCheckReport:
    """Compare full-pipeline analytic gradients against central finite differences.

    Only the parameter blocks of enabled stages appear in the report. Keep the
    instance small; the finite-difference sweep visits every parameter entry.
    """
    loss_cfg = cfg.loss_config(graph.taxonomy.levels)
    analytic = _analytic_grads(state, record, table, graph, cfg, loss_cfg)
    active = state.param_blocks(cfg.toggles, cfg.share_encoders, cfg.fusion.lambda2 != 0.0)

    base64 = {name: arr.astype(np.float64) for name, arr in active.items()}

    def loss_at(overrides: dict[str, np.ndarray]) -> float:
        bt = _BatchTape(state, [record], table, graph, cfg, overrides=overrides)
        return float(bt.loss(loss_cfg).value)

    report = GradCheckReport(threshold=threshold)
    for name in active:
        fd = np.zeros_like(base64[name])
        flat = fd.reshape(-1)
        for j in range(flat.size):
            bumped = {k: v.copy() for k, v in base64.items()}
            bumped[name].reshape(-1)[j] = base64[name].reshape(-1)[j] + step
            hi = loss_at(bumped)
            bumped[name].reshape(-1)[j] = base64[name].reshape(-1)[j] - step
            lo = loss_at(bumped)
            flat[j] = (hi - lo) / (2 * step)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-6)
        rel = float(np.max(np.abs(a - fd) / denom)) if a.size else 0.0
        report.blocks.append(GradBlockReport(name=name, max_rel_err=rel, flagged=rel > threshold))
    return report


# --- checkpoint format: magic HGCK, version, named float32 blocks, CRC32 ---

_CK_MAGIC = b"HGCK"
_CK_VERSION = 1
_VARIANT_IDS = {v: i for i, v in enumerate(VARIANTS)}
_STRATEGY_IDS = {s: i for i, s in enumerate(STRATEGIES)}
_ACT_IDS = {a: i for i, a in enumerate(_ACT_KINDS)}


def _f64_block(values) -> np.ndarray:
    """Bit-cast float64 values into the float32 payload lane (lossless)."""
    return np.asarray(values, dtype="<f8").view("<f4")


def _f64_unblock(payload: np.ndarray) -> np.ndarray:
    return payload.astype("<f4", copy=False).view("<f8")


def _pack_block(name: str, array: np.ndarray) -> bytes:
    data = np.ascontiguousarray(array, dtype="<f4")
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def save_checkpoint(path, state: ModelState, cfg: TrainConfig, graph: HierGraph) -> None:
    tg = cfg.toggles
    fusion = cfg.fusion
    meta = [
        graph.taxonomy.levels,
        state.text_offsets.shape[1],
        state.visual_prompts.shape[0],
        _VARIANT_IDS[cfg.variant],
        cfg.depth,
        1.0 if cfg.share_encoders else 0.0,
        *[1.0 if t else 0.0 for t in tg.as_tuple()],
        _STRATEGY_IDS[cfg.strategy],
        _ACT_IDS[cfg.activation.kind],
        cfg.activation.slope,
        state.theta_t.attn_slope,
        fusion.lambda1,
        fusion.lambda2,
        -1.0 if fusion.alpha is None else fusion.alpha,
        cfg.lr0,
        cfg.lr_min,
        cfg.epochs,
        cfg.batch_size,
        cfg.seed,
        state.step,
        1.0 if state.prototypes is not None else 0.0,
    ]
    blocks: list[tuple[str, np.ndarray]] = [
        ("meta/core", _f64_block(meta)),
        ("meta/level_sizes", _f64_block(graph.taxonomy.level_sizes)),
        ("meta/level_weights", _f64_block(cfg.loss_config(graph.taxonomy.levels).level_weights)),
        ("text_offsets", state.text_offsets),
        ("visual_prompts", state.visual_prompts),
    ]
    _append_encoder_blocks(blocks, "theta_t", state.theta_t)
    if not cfg.share_encoders:
        _append_encoder_blocks(blocks, "theta_v", state.theta_v)
    if state.prototypes is not None:
        blocks.append(("prototypes/values", _f64_block(state.prototypes.values.reshape(-1))))
        blocks.append(("prototypes/counts", _f64_block(state.prototypes.counts)))

    body = struct.pack("<4sII", _CK_MAGIC, _CK_VERSION, len(blocks))
    for name, array in blocks:
        body += _pack_block(name, array)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def _append_encoder_blocks(blocks: list, prefix: str, params: EncoderParams) -> None:
    for i, layer in enumerate(params.layers):
        blocks.append((f"{prefix}.layer{i}.weight", layer.weight))
        if layer.attn is not None:
            blocks.append((f"{prefix}.layer{i}.attn", layer.attn))
        if layer.weight_nbr is not None:
            blocks.append((f"{prefix}.layer{i}.weight_nbr", layer.weight_nbr))


def load_checkpoint(path) -> tuple[ModelState, TrainConfig]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != _CK_MAGIC:
        raise FormatError("not a checkpoint file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint CRC mismatch")
    magic, version, count = struct.unpack_from("<4sII", body)
    if version != _CK_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = 12
    raw: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", body, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        raw[name] = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(body):
        raise FormatError("trailing bytes in checkpoint")

    meta = _f64_unblock(raw["meta/core"])
    levels, dim, vrows = int(meta[0]), int(meta[1]), int(meta[2])
    variant = VARIANTS[int(meta[3])]
    depth = int(meta[4])
    shared = bool(meta[5])
    toggles = Toggles(*(bool(x) for x in meta[6:10]))
    strategy = STRATEGIES[int(meta[10])]
    activation = Activation(kind=_ACT_KINDS[int(meta[11])], slope=float(meta[12]))
    attn_slope = float(meta[13])
    lambda1, lambda2 = float(meta[14]), float(meta[15])
    alpha = None if meta[16] == -1.0 else float(meta[16])
    cfg = TrainConfig(
        lr0=float(meta[17]),
        epochs=int(meta[19]),
        batch_size=int(meta[20]),
        seed=int(meta[21]),
        toggles=toggles,
        variant=variant,
        depth=depth,
        activation=activation,
        share_encoders=shared,
        visual_prompt_rows=vrows,
        fusion=FusionConfig(alpha=alpha, lambda1=lambda1, lambda2=lambda2),
        level_weights=tuple(_f64_unblock(raw["meta/level_weights"])),
        strategy=strategy,
        lr_min=float(meta[18]),
    )

    def read_encoder(prefix: str) -> EncoderParams:
        layers = []
        for i in range(depth):
            layers.append(
                LayerParams(
                    weight=raw[f"{prefix}.layer{i}.weight"],
                    attn=raw.get(f"{prefix}.layer{i}.attn"),
                    weight_nbr=raw.get(f"{prefix}.layer{i}.weight_nbr"),
                )
            )
        return EncoderParams(variant=variant, layers=layers, activation=activation, attn_slope=attn_slope)

    theta_t = read_encoder("theta_t")
    theta_v = theta_t if shared else read_encoder("theta_v")
    protos = None
    if meta[23]:
        sizes = _f64_unblock(raw["meta/level_sizes"]).astype(int)
        protos = PrototypeTable(
            values=_f64_unblock(raw["prototypes/values"]).reshape(int(sizes.sum()), dim),
            counts=_f64_unblock(raw["prototypes/counts"]).astype(np.int64),
        )
    state = ModelState(
        text_offsets=raw["text_offsets"],
        visual_prompts=raw["visual_prompts"].reshape(vrows, dim),
        theta_t=theta_t,
        theta_v=theta_v,
        prototypes=protos,
        step=int(meta[22]),
    )
    return state, cfg
