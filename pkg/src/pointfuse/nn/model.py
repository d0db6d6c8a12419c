"""Two-encoder point network with a fusing decoder.

A sub-volume encoder (four set-abstraction stages) extracts local structure,
a scene encoder of the same shape runs on a sparse sample of the whole scene,
and a decoder walks back up the sub-volume hierarchy.  Each decoder level
concatenates interpolated features from the level below, interpolated
scene-encoder features and the encoder skip features, then applies shared
MLPs.  A two-layer head produces per-point class logits.

Logit column j scores label id j + 1; label 0 marks unannotated points.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..sampling import PointSet, ball_query, farthest_point_sample, three_nn_weights
from .autograd import (
    Tensor,
    affine,
    as_tensor,
    concat,
    gather,
    group_max,
    interpolate,
    relu,
    softmax_np,
    weighted_nll,
)

Params = "OrderedDict[str, np.ndarray]"


@dataclass(frozen=True)
class LayerSpec:
    n_points: int
    radius: float
    group_size: int
    mlp_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mlp_dims", tuple(int(d) for d in self.mlp_dims))
        if self.n_points < 1 or self.radius <= 0 or self.group_size < 1 or not self.mlp_dims:
            raise ValueError(f"invalid layer spec {self}")
        if min(self.mlp_dims) < 1:
            raise ValueError("MLP widths must be >= 1")


FULL_SUBVOLUME_LAYERS = (
    LayerSpec(1024, 0.1, 32, (128, 128)),
    LayerSpec(256, 0.2, 32, (256, 256)),
    LayerSpec(64, 0.4, 32, (512, 512)),
    LayerSpec(16, 0.8, 32, (512, 512, 726)),
)
FULL_SCENE_LAYERS = (
    LayerSpec(4096, 0.4, 32, (128, 128)),
    LayerSpec(1024, 0.8, 32, (256, 256)),
    LayerSpec(256, 1.2, 32, (512, 512)),
    LayerSpec(128, 1.6, 32, (512, 512, 726)),
)


@dataclass(frozen=True)
class ModelConfig:
    subvolume_layers: tuple[LayerSpec, ...] = FULL_SUBVOLUME_LAYERS
    scene_layers: tuple[LayerSpec, ...] = FULL_SCENE_LAYERS
    decoder_mlp_width: int = 256
    decoder_mlp_layers: int = 2
    num_classes: int = 20
    input_feature_dim: int = 259
    use_global: bool = True
    # "level": scene stage 4 feeds decoder level 1, ..., stage 1 feeds level 4
    # "final": the last scene stage feeds every decoder level
    global_wiring: str = "level"
    subvolume_points: int = 8192
    scene_points: int = 16384

    def __post_init__(self):
        object.__setattr__(self, "subvolume_layers", tuple(self.subvolume_layers))
        object.__setattr__(self, "scene_layers", tuple(self.scene_layers))
        if len(self.subvolume_layers) != 4 or len(self.scene_layers) != 4:
            raise ValueError("both encoders need exactly 4 layers")
        if self.decoder_mlp_width < 1 or self.decoder_mlp_layers < 1 or self.num_classes < 1:
            raise ValueError("decoder width/depth and class count must be >= 1")
        if self.input_feature_dim < 0:
            raise ValueError("input_feature_dim must be >= 0")
        if self.global_wiring not in ("level", "final"):
            raise ValueError(f"unknown global wiring {self.global_wiring!r}")

    @classmethod
    def toy(cls, num_classes: int = 4, input_feature_dim: int = 259, **kw) -> "ModelConfig":
        """Full-size widths divided by 16 on a 128-point sub-volume and 256-point scene."""
        base = dict(
            subvolume_layers=(
                LayerSpec(64, 0.2, 16, (8, 8)),
                LayerSpec(32, 0.4, 16, (16, 16)),
                LayerSpec(16, 0.8, 16, (32, 32)),
                LayerSpec(8, 1.2, 16, (32, 32, 45)),
            ),
            scene_layers=(
                LayerSpec(128, 0.4, 16, (8, 8)),
                LayerSpec(64, 0.8, 16, (16, 16)),
                LayerSpec(32, 1.2, 16, (32, 32)),
                LayerSpec(16, 1.6, 16, (32, 32, 45)),
            ),
            decoder_mlp_width=16,
            num_classes=num_classes,
            input_feature_dim=input_feature_dim,
            subvolume_points=128,
            scene_points=256,
        )
        base.update(kw)
        return cls(**base)

    @property
    def point_channels(self) -> int:
        """Per-point input width: xyz plus the non-coordinate channels."""
        return 3 + self.input_feature_dim

    def global_stage(self, level: int) -> int:
        """Scene encoder stage (1..4) feeding decoder level (1..4)."""
        return 4 if self.global_wiring == "final" else 5 - level

    def encoder_widths(self, layers) -> list[int]:
        return [self.point_channels] + [spec.mlp_dims[-1] for spec in layers]

    def shapes(self) -> "OrderedDict[str, tuple[int, int]]":
        """Name -> (fan_in, fan_out) of every affine layer, in a fixed order."""
        out: OrderedDict[str, tuple[int, int]] = OrderedDict()
        for prefix, layers in (("sub", self.subvolume_layers), ("scene", self.scene_layers)):
            widths = self.encoder_widths(layers)
            for i, spec in enumerate(layers):
                fan_in = 3 + widths[i]
                for j, d in enumerate(spec.mlp_dims):
                    out[f"{prefix}.{i}.{j}"] = (fan_in, d)
                    fan_in = d
        sub_w = self.encoder_widths(self.subvolume_layers)
        scene_w = self.encoder_widths(self.scene_layers)
        prev = sub_w[4]
        for level in range(1, 5):
            fan_in = prev + sub_w[4 - level]
            if self.use_global:
                fan_in += scene_w[self.global_stage(level)]
            for j in range(self.decoder_mlp_layers):
                out[f"dec.{level - 1}.{j}"] = (fan_in, self.decoder_mlp_width)
                fan_in = self.decoder_mlp_width
            prev = self.decoder_mlp_width
        out["head.0"] = (prev, self.decoder_mlp_width)
        out["head.1"] = (self.decoder_mlp_width, self.num_classes)
        return out


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float64) -> "OrderedDict[str, np.ndarray]":
    """Glorot-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, (fi, fo) in config.shapes().items():
        lim = np.sqrt(6.0 / (fi + fo))
        params[name + ".W"] = rng.uniform(-lim, lim, size=(fi, fo)).astype(dtype)
        params[name + ".b"] = np.zeros(fo, dtype=dtype)
    return params


def check_params(config: ModelConfig, params) -> None:
    for name, (fi, fo) in config.shapes().items():
        W, b = params.get(name + ".W"), params.get(name + ".b")
        if W is None or b is None:
            raise ValueError(f"missing parameters for layer {name}")
        if np.shape(W) != (fi, fo) or np.shape(b) != (fo,):
            raise ValueError(f"layer {name}: expected W {(fi, fo)}, b {(fo,)}, got {np.shape(W)}, {np.shape(b)}")


def _layers(tp: dict, prefix: str, n: int) -> list[tuple[Tensor, Tensor]]:
    return [(tp[f"{prefix}.{j}.W"], tp[f"{prefix}.{j}.b"]) for j in range(n)]


def mlp(x, layers: Sequence[tuple[Tensor, Tensor]], last_relu: bool = True) -> Tensor:
    x = as_tensor(x)
    for k, (W, b) in enumerate(layers):
        if x.shape[-1] != W.shape[0]:
            raise ValueError(f"MLP input width {x.shape[-1]} does not match weight rows {W.shape[0]}")
        x = affine(x, W, b)
        if last_relu or k < len(layers) - 1:
            x = relu(x)
    return x


@dataclass
class Stage:
    positions: np.ndarray
    features: Tensor
    centers: Optional[np.ndarray] = None
    groups: Optional[np.ndarray] = None


def set_abstraction(
    positions: np.ndarray,
    features,
    spec: LayerSpec,
    layers: Sequence[tuple[Tensor, Tensor]],
    start_index: int = 0,
) -> Stage:
    """Sample centers by FPS, group by ball query, run the shared MLP on
    (member xyz - center xyz, member features) and max-pool each group."""
    features = as_tensor(features)
    if len(positions) < 1:
        raise ValueError("set abstraction needs at least one input point")
    if len(positions) != features.shape[0]:
        raise ValueError("positions and features disagree on point count")
    k = min(spec.n_points, len(positions))
    centers = farthest_point_sample(positions, k, start_index)
    new_pos = positions[centers]
    groups = ball_query(positions, new_pos, spec.radius, spec.group_size).indices
    local = (positions[groups] - new_pos[:, None, :]).astype(features.data.dtype)
    grouped = concat([Tensor(local), gather(features, groups)], axis=-1)
    pooled = group_max(mlp(grouped, layers))
    return Stage(new_pos, pooled, centers, groups)


def feature_propagation(
    query_positions: np.ndarray,
    support_positions: np.ndarray,
    support_features,
    extras: Sequence,
    layers: Sequence[tuple[Tensor, Tensor]],
) -> Tensor:
    """Inverse-distance 3-NN interpolation of support features onto the
    query points, concatenated with `extras` and passed through the MLP."""
    idx, w = three_nn_weights(query_positions, support_positions)
    up = interpolate(support_features, idx, w)
    return mlp(concat([up, *extras], axis=-1), layers)


def to_tensors(params, requires_grad: bool = True) -> "OrderedDict[str, Tensor]":
    return OrderedDict((k, Tensor(v, requires_grad=requires_grad, name=k)) for k, v in params.items())


@dataclass
class ForwardTrace:
    logits: Tensor
    leaves: "OrderedDict[str, Tensor]"
    sub_stages: list[Stage] = field(default_factory=list)
    scene_stages: list[Stage] = field(default_factory=list)
    decoder_sizes: list[int] = field(default_factory=list)


def encode(points: PointSet, layers, tp, prefix: str, start_indices, dtype) -> list[Stage]:
    feats = np.concatenate([points.positions, points.features], axis=1).astype(dtype)
    stages = [Stage(points.positions, Tensor(feats))]
    for i, spec in enumerate(layers):
        prev = stages[-1]
        stages.append(
            set_abstraction(prev.positions, prev.features, spec, _layers(tp, f"{prefix}.{i}", len(spec.mlp_dims)), start_indices[i])
        )
    return stages


def forward(
    subvolume: PointSet,
    scene: PointSet,
    config: ModelConfig,
    params,
    rng: Optional[np.random.Generator] = None,
    requires_grad: bool = True,
) -> ForwardTrace:
    """Per-point logits for `subvolume`.

    FPS starts at index 0 of each stage unless `rng` is given, in which case
    start indices are drawn from it (training).
    """
    check_params(config, params)
    if subvolume.features.shape[1] != config.input_feature_dim or scene.features.shape[1] != config.input_feature_dim:
        raise ValueError(
            f"point features have {subvolume.features.shape[1]}/{scene.features.shape[1]} channels, "
            f"config expects {config.input_feature_dim}"
        )
    dtype = next(iter(params.values())).dtype
    tp = to_tensors(params, requires_grad)

    def starts(layers, m):
        out = []
        for spec in layers:
            out.append(0 if rng is None else int(rng.integers(m)))
            m = min(spec.n_points, m)
        return out

    sub = encode(subvolume, config.subvolume_layers, tp, "sub", starts(config.subvolume_layers, len(subvolume)), dtype)
    glob = None
    if config.use_global:
        glob = encode(scene, config.scene_layers, tp, "scene", starts(config.scene_layers, len(scene)), dtype)

    cur_pos, cur_feat = sub[4].positions, sub[4].features
    sizes = [len(cur_pos)]
    for level in range(1, 5):
        target = sub[4 - level]
        extras = []
        if glob is not None:
            g = glob[config.global_stage(level)]
            gi, gw = three_nn_weights(target.positions, g.positions)
            extras.append(interpolate(g.features, gi, gw))
        extras.append(target.features)
        cur_feat = feature_propagation(
            target.positions, cur_pos, cur_feat, extras, _layers(tp, f"dec.{level - 1}", config.decoder_mlp_layers)
        )
        cur_pos = target.positions
        sizes.append(len(cur_pos))
    logits = mlp(cur_feat, _layers(tp, "head", 2), last_relu=False)
    return ForwardTrace(logits, tp, sub, glob or [], sizes)


def predict_proba(subvolume: PointSet, scene: PointSet, config: ModelConfig, params) -> np.ndarray:
    trace = forward(subvolume, scene, config, params, requires_grad=False)
    return softmax_np(trace.logits.data)


def weighted_cross_entropy(logits, labels, class_weights) -> Tensor:
    """Class-weighted mean of -log softmax over annotated points (label 0 skipped)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    num_classes = logits.shape[-1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) > num_classes:
        raise ValueError("labels must lie in [0, num_classes]")
    rows = np.flatnonzero(labels > 0)
    if len(rows) == 0:
        raise ValueError("no supervised points")
    cols = labels[rows] - 1
    w = np.asarray(class_weights, dtype=logits.data.dtype)[cols]
    return weighted_nll(gather(logits, rows), cols, w)


def inverse_frequency_weights(labels, num_classes: int) -> np.ndarray:
    """1/frequency for present classes, rescaled to mean 1 over them; absent classes get 1."""
    labels = np.asarray(labels)
    counts = np.bincount(labels[labels > 0] - 1, minlength=num_classes)[:num_classes].astype(np.float64)
    w = np.ones(num_classes)
    present = counts > 0
    if present.any():
        inv = 1.0 / counts[present]
        w[present] = inv / inv.mean()
    return w


def gradients(trace: ForwardTrace, loss: Tensor) -> "OrderedDict[str, np.ndarray]":
    """d(loss)/d(param) for every parameter; unused parameters get zeros."""
    from .autograd import backward as _backward

    _backward(loss)
    return OrderedDict(
        (k, t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in trace.leaves.items()
    )


def backward(trace: ForwardTrace, loss: Tensor):
    return gradients(trace, loss)


def with_features(config: ModelConfig, input_feature_dim: int) -> ModelConfig:
    return replace(config, input_feature_dim=input_feature_dim)
