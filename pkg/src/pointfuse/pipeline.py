"""End-to-end glue: scene -> poses -> features on vertices -> point sets -> train -> infer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backprojection import VertexFeatureStore, backproject_views, finalize, vertex_coverage
from .camera import CameraView, intrinsics_from_fov
from .geometry import Mesh
from .inference import argmax_labels, evaluate_miou, infer_scene, window_schedule
from .nn.model import ModelConfig
from .nn.train import TrainConfig, TrainingSample, train_toy
from .poses import PoseGridConfig, filter_low_context, generate_pose_grid, greedy_select_coverage, render_candidates
from .raycast import build_bvh
from .sampling import PointSet, SubVolumeSpec, extract_subvolume, training_filter
from .scenegen import NUM_CLASSES, SceneRecipe, generate_scene, synth_features

log = logging.getLogger(__name__)

FEATURE_MODES = ("xyz", "xyz+n", "xyz+n+d")


@dataclass
class ViewPlan:
    """Rendered candidate views and the greedy pick over those that passed the context filter."""

    cameras: list[CameraView]
    hit_fractions: list[float]
    kept: list[int]  # candidate indices passing the context filter
    selected: list[int]  # candidate indices chosen by greedy coverage, in pick order
    maps: dict = field(default_factory=dict)  # candidate index -> AssociationMap for kept views


def toy_pose_config(**kw) -> PoseGridConfig:
    """Coarser grid and tiny images for desk-scale runs."""
    base = dict(grid_w=4, grid_d=4, resolution=(30, 40), budget=64)
    base.update(kw)
    return PoseGridConfig(**base)


def plan_views(mesh: Mesh, config: PoseGridConfig, hfov_deg: float = 60.0, bvh=None, threads: int = 1) -> ViewPlan:
    bvh = bvh or build_bvh(mesh)
    h, w = config.resolution
    K = intrinsics_from_fov(w, h, hfov_deg)
    cams = generate_pose_grid(mesh.bounds(), config, K)
    maps = render_candidates(cams, mesh, bvh, threads)
    kept_pairs = filter_low_context(cams, mesh, bvh, config.context_threshold, maps=maps)
    kept_ids = [i for i, m in enumerate(maps) if m.hit_fraction >= config.context_threshold]
    budget = config.budget or len(kept_ids)
    sel_local = greedy_select_coverage(kept_pairs, mesh, budget) if kept_pairs else []
    selected = [kept_ids[i] for i in sel_local]
    return ViewPlan(cams, [m.hit_fraction for m in maps], kept_ids, selected, {i: maps[i] for i in kept_ids})


def backproject_scene(
    mesh: Mesh,
    plan: ViewPlan,
    dim: int,
    noise: float,
    seed: int,
    threads: int = 1,
) -> tuple[VertexFeatureStore, float]:
    """Synthesize features for the selected views and splat them; returns (store, coverage).

    Views are visited in ascending candidate index, the order the CLI writes them.
    """
    views = []
    for k, i in enumerate(sorted(plan.selected)):
        amap = plan.maps[i]
        feat = synth_features(mesh, plan.cameras[i], amap, dim, noise, seed=seed * 100003 + k)
        views.append((amap, feat))
    acc = backproject_views(views, mesh.faces, mesh.n_vertices, dim, threads=threads)
    return finalize(acc), vertex_coverage(acc)


def mesh_point_set(mesh: Mesh, store: Optional[VertexFeatureStore], mode: str = "xyz+n+d") -> PointSet:
    """Vertices as a PointSet with the channels selected by `mode`."""
    if mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {mode!r}")
    mesh = mesh.with_normals()
    parts = []
    if mode != "xyz":
        parts.append(mesh.normals)
    if mode == "xyz+n+d":
        if store is None:
            raise ValueError("image features requested but no vertex feature store given")
        parts.append(store.features)
    feats = np.concatenate(parts, axis=1) if parts else np.zeros((mesh.n_vertices, 0))
    labels = mesh.labels if mesh.labels is not None else np.zeros(mesh.n_vertices, dtype=np.int64)
    return PointSet(
        mesh.vertices.copy(),
        feats,
        labels,
        np.arange(mesh.n_vertices),
        slice(0, 3) if mode != "xyz" else None,
    )


def feature_dim(mode: str, image_dim: int) -> int:
    return {"xyz": 0, "xyz+n": 3, "xyz+n+d": 3 + image_dim}[mode]


def training_windows(
    scene: PointSet, n_windows: int, seed: int, window: float = 1.5, max_tries: int | None = None
) -> list[TrainingSample]:
    """Random sub-volumes, dropping those with < 70% annotated vertices."""
    rng = np.random.default_rng(seed)
    lo, hi = scene.positions.min(axis=0), scene.positions.max(axis=0)
    out = []
    tries = 0
    max_tries = max_tries or 20 * n_windows
    while len(out) < n_windows and tries < max_tries:
        tries += 1
        cx, cy = rng.uniform(lo[:2], hi[:2])
        idx = extract_subvolume(scene, SubVolumeSpec(cx, cy, window, window))
        if len(idx) == 0 or not training_filter(scene.labels[idx]):
            continue
        out.append(TrainingSample(scene.take(idx), scene))
    return out


@dataclass
class SuiteScene:
    mesh: Mesh
    store: VertexFeatureStore
    coverage: float
    n_views: int


@dataclass
class SuiteSettings:
    image_dim: int = 32
    noise: float = 0.1
    grid_step: float = 0.2
    room: tuple = (4.0, 4.0, 2.6)
    room_jitter: float = 0.15
    poses: PoseGridConfig = field(default_factory=toy_pose_config)
    hfov_deg: float = 60.0
    threads: int = 1


def build_scene(seed: int, settings: SuiteSettings) -> SuiteScene:
    recipe = SceneRecipe(seed=seed, room=settings.room, room_jitter=settings.room_jitter, grid_step=settings.grid_step)
    mesh = generate_scene(recipe)
    plan = plan_views(mesh, settings.poses, settings.hfov_deg, threads=settings.threads)
    store, cov = backproject_scene(mesh, plan, settings.image_dim, settings.noise, seed, settings.threads)
    return SuiteScene(mesh, store, cov, len(plan.selected))


def train_on_scenes(
    scenes: Sequence[SuiteScene],
    mode: str,
    config: ModelConfig,
    steps: int,
    seed: int,
    train: TrainConfig,
    windows_per_scene: int = 40,
):
    data = []
    for k, sc in enumerate(scenes):
        ps = mesh_point_set(sc.mesh, sc.store, mode)
        data += training_windows(ps, windows_per_scene, seed * 7919 + k)
    return train_toy(data, config, steps, seed, train)


def evaluate_scenes(
    scenes: Sequence[SuiteScene],
    mode: str,
    config: ModelConfig,
    params,
    stride: float = 0.45,
    seed: int = 0,
    threads: int = 1,
) -> list[float]:
    out = []
    for k, sc in enumerate(scenes):
        ps = mesh_point_set(sc.mesh, sc.store, mode)
        sched = window_schedule(sc.mesh.bounds(), 1.5, stride, 0.5)
        field_ = infer_scene(ps, (config, params), sched, seed * 1009 + k, threads)
        pred = argmax_labels(field_)
        out.append(evaluate_miou(pred, sc.mesh.labels, config.num_classes).miou)
    return out


def toy_model_config(mode: str, image_dim: int, use_global: bool = True) -> ModelConfig:
    return ModelConfig.toy(num_classes=NUM_CLASSES, input_feature_dim=feature_dim(mode, image_dim), use_global=use_global)
