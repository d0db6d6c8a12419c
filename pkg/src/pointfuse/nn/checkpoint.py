"""Binary parameter checkpoints and the key-value model config file."""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .model import LayerSpec, ModelConfig

PNET_VERSION = 1


def save_checkpoint(path, params) -> None:
    """b"PNET", u32 version, u32 tensor count, then per tensor:
    u16 name length, name, u32 rank, rank x u32 dims, float32 data."""
    with open(path, "wb") as fh:
        fh.write(b"PNET" + struct.pack("<II", PNET_VERSION, len(params)))
        for name, arr in params.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f4")  # tobytes() writes C order; keeps rank 0
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path, dtype=np.float64) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"PNET":
        raise ValueError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", data, 4)
    if version != PNET_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims).astype(dtype)
        off += 4 * size
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after last tensor")
    return out


_SCALARS = {
    "decoder_mlp_width": int,
    "decoder_mlp_layers": int,
    "num_classes": int,
    "input_feature_dim": int,
    "global_wiring": str,
    "subvolume_points": int,
    "scene_points": int,
}


def format_config(config: ModelConfig) -> str:
    lines = []
    for key in _SCALARS:
        lines.append(f"{key} = {getattr(config, key)}")
    lines.append(f"use_global = {'true' if config.use_global else 'false'}")
    for prefix, layers in (("subvolume_layer", config.subvolume_layers), ("scene_layer", config.scene_layers)):
        for i, spec in enumerate(layers):
            dims = " ".join(str(d) for d in spec.mlp_dims)
            lines.append(f"{prefix}.{i} = {spec.n_points} {spec.radius!r} {spec.group_size} {dims}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ModelConfig:
    kw: dict = {}
    sub: dict[int, LayerSpec] = {}
    scene: dict[int, LayerSpec] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in _SCALARS:
            kw[key] = _SCALARS[key](val)
        elif key == "use_global":
            if val not in ("true", "false"):
                raise ValueError(f"config line {lineno}: use_global must be true or false")
            kw[key] = val == "true"
        elif key.startswith(("subvolume_layer.", "scene_layer.")):
            head, idx = key.rsplit(".", 1)
            tok = val.split()
            if len(tok) < 4:
                raise ValueError(f"config line {lineno}: layer needs n_points radius group_size dims...")
            spec = LayerSpec(int(tok[0]), float(tok[1]), int(tok[2]), tuple(int(t) for t in tok[3:]))
            (sub if head == "subvolume_layer" else scene)[int(idx)] = spec
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    if sub:
        kw["subvolume_layers"] = tuple(sub[i] for i in sorted(sub))
    if scene:
        kw["scene_layers"] = tuple(scene[i] for i in sorted(scene))
    return ModelConfig(**kw)


def save_config(path, config: ModelConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_config(config))


def load_config(path) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
