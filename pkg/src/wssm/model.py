"""End-to-end forecaster: embedding, hierarchical encoder, query decoder, head.

Checkpoints are a single binary container::

    b"WSSMCKPT" | u64 manifest length | manifest JSON (utf-8) | u32 record count
    | records: u32 name length, name, u32 ndim, ndim x u64 dims, <f8 values

All integers little-endian; arrays row-major. Parameter records use their
dotted tree name; optimizer moments are stored as ``optim.m.<name>`` and
``optim.v.<name>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import (
    ConfigurationError,
    ScaleSpec,
    StationMeta,
    build_input_features,
    geo_encode_features,
    geo_features,
    init_geo_params,
    init_patch_params,
    init_value_params,
    pos_encode,
)
from .encoder import HierarchySpec, hierarchical_encode
from .numerics import tensor as tp
from .params import flatten, map_tree, unflatten, uniform_fan_in
from .ssmblocks import init_block_params, tf_block

FORMAT_VERSION = "wssm-ckpt-1"
MAGIC = b"WSSMCKPT"


class CheckpointError(ValueError):
    pass


@dataclass
class WssmConfig:
    """Architecture hyperparameters. Defaults are the desk-scale setting;
    :meth:`full_scale` gives the full-size one."""

    n_vars: int = 5
    input_len: int = 48
    lead: int = 48
    d: int = 16
    blocks: int = 1
    scales: tuple = ((16, 8), (8, 4), (2, 1))
    state: int = 16
    expand: int = 2
    conv: int = 4
    kernel: int = 5
    seed: int = 0

    def __post_init__(self):
        self.scales = tuple(tuple(int(v) for v in s) for s in self.scales)

    @classmethod
    def full_scale(cls, lead=48, **kw):
        return cls(lead=lead, d=128, blocks=2, **kw)

    @property
    def hierarchy(self) -> HierarchySpec:
        return HierarchySpec(tuple(ScaleSpec(w, s) for w, s in self.scales))

    def validate(self) -> list[int]:
        for name in ("n_vars", "input_len", "lead", "d", "blocks", "state", "expand", "conv", "kernel"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d % 2:
            raise ConfigurationError(f"d must be even, got {self.d}")
        return self.hierarchy.validate(self.input_len, self.kernel)

    def to_dict(self):
        out = asdict(self)
        out["scales"] = [list(s) for s in self.scales]
        return out

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigurationError(f"unknown model config keys: {sorted(extra)}")
        return cls(**data)


def init_params(cfg: WssmConfig, rng=None):
    cfg.validate()
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    d = cfg.d

    def stack(n):
        return {str(i): init_block_params(rng, d, cfg.n_vars, cfg.expand, cfg.state, cfg.conv, cfg.kernel)
                for i in range(n)}

    return {
        "value": init_value_params(rng, d),
        "geo": init_geo_params(rng, d),
        "patch": {str(i): init_patch_params(rng, s, d) for i, s in enumerate(cfg.hierarchy.scales)},
        "encoder": stack(cfg.blocks),
        "decoder": stack(cfg.blocks),
        "head": {"weight": uniform_fan_in(rng, d, (d, 1)), "bias": np.zeros(1)},
    }


def param_shapes(cfg: WssmConfig) -> dict:
    return {k: v.shape for k, v in flatten(init_params(cfg, np.random.default_rng(0))).items()}


def _blocks(tree):
    return [tree[k] for k in sorted(tree, key=int)]


def forward_batch(params, cfg: WssmConfig, x, past_feats, future_feats) -> tp.Tensor:
    """x: (B, M, T); past_feats: (B, T, 7); future_feats: (B, H, 7) -> (B, M, H)."""
    x = np.asarray(x, dtype=np.float64)
    horizon = future_feats.shape[-2]
    d = cfg.d
    h = build_input_features(params, x, past_feats)
    patch = [params["patch"][k] for k in sorted(params["patch"], key=int)]
    z = hierarchical_encode(h, cfg.hierarchy, _blocks(params["encoder"]), patch)
    q = tp.add(geo_encode_features(params["geo"], future_feats), pos_encode(horizon, d))
    q = tp.reshape(q, q.shape[:-2] + (1, horizon, d))
    q = tp.add(q, np.zeros(x.shape[:-1] + (horizon, d)))
    u = tp.concat([z, q], axis=-2)
    for block in _blocks(params["decoder"]):
        u = tf_block(u, block)
    n = u.shape[-2]
    tail = tp.getitem(u, (Ellipsis, slice(n - horizon, n), slice(None)))
    out = tp.linear(tail, params["head"]["weight"], params["head"]["bias"])
    return tp.reshape(out, out.shape[:-1])


def forward(params, cfg: WssmConfig, x, meta: StationMeta, past_stamps: Sequence[datetime],
            future_stamps: Sequence[datetime]) -> np.ndarray:
    """Single-sample forecast (M, H) in normalized units."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.n_vars, cfg.input_len):
        raise ValueError(f"x has shape {x.shape}, expected {(cfg.n_vars, cfg.input_len)}")
    if len(past_stamps) != cfg.input_len:
        raise ValueError(f"{len(past_stamps)} past stamps for input length {cfg.input_len}")
    past = geo_features(meta, past_stamps)[None]
    future = geo_features(meta, future_stamps)[None]
    return forward_batch(params, cfg, x[None], past, future).data[0]


def count_params(params) -> int:
    return int(sum(v.size for v in flatten(params).values()))


def param_report(params) -> dict:
    return {k: count_params(v) if isinstance(v, dict) else int(v.size) for k, v in params.items()}


# checkpoint container ------------------------------------------------------


def write_container(path, manifest: dict, arrays: dict):
    path = Path(path)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(blob)), blob, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_container(path):
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    try:
        (mlen,) = struct.unpack_from("<Q", buf, 8)
        pos = 16
        manifest = json.loads(buf[pos:pos + mlen].decode("utf-8"))
        pos += mlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            arrays[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return manifest, arrays


@dataclass
class Checkpoint:
    config: WssmConfig
    params: dict
    iteration: int = 0
    extra: dict = field(default_factory=dict)
    optimizer: dict | None = None  # {"step": t, "m": tree, "v": tree}


def save_checkpoint(path, ckpt: Checkpoint):
    manifest = {
        "format": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "iteration": int(ckpt.iteration),
        **ckpt.extra,
    }
    arrays = dict(flatten(ckpt.params))
    if ckpt.optimizer is not None:
        manifest["optimizer_step"] = int(ckpt.optimizer["step"])
        for kind in ("m", "v"):
            for name, arr in flatten(ckpt.optimizer[kind]).items():
                arrays[f"optim.{kind}.{name}"] = arr
    write_container(path, manifest, arrays)


def load_checkpoint(path) -> Checkpoint:
    manifest, arrays = read_container(path)
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')!r}")
    cfg = WssmConfig.from_dict(manifest["config"])
    expected = param_shapes(cfg)
    params = {k: v for k, v in arrays.items() if not k.startswith("optim.")}
    _check_records(path, expected, params, "parameter")
    optimizer = None
    if "optimizer_step" in manifest:
        moments = {}
        for kind in ("m", "v"):
            pre = f"optim.{kind}."
            got = {k[len(pre):]: v for k, v in arrays.items() if k.startswith(pre)}
            _check_records(path, expected, got, f"optimizer {kind}")
            moments[kind] = unflatten(got)
        optimizer = {"step": manifest["optimizer_step"], **moments}
    elif any(k.startswith("optim.") for k in arrays):
        raise CheckpointError(f"{path}: optimizer records without optimizer_step")
    extra = {k: v for k, v in manifest.items() if k not in ("format", "config", "iteration", "optimizer_step")}
    return Checkpoint(cfg, unflatten(params), manifest.get("iteration", 0), extra, optimizer)


def _check_records(path, expected, got, what):
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    if missing or extra:
        raise CheckpointError(f"{path}: {what} records mismatch; missing={missing} unexpected={extra}")
    for name, shape in expected.items():
        if tuple(got[name].shape) != tuple(shape):
            raise CheckpointError(f"{path}: {what} {name} has shape {got[name].shape}, expected {shape}")
        if not np.all(np.isfinite(got[name])):
            raise CheckpointError(f"{path}: {what} {name} contains non-finite values")


def copy_params(params):
    return map_tree(lambda a: np.array(a, copy=True), params)
