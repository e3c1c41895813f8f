"""Input features: value embedding, sinusoidal positions, geographic encoding,
and strided patchification."""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from typing import Sequence

import numpy as np

from .numerics import tensor as tp
from .params import uniform_fan_in

GEO_KEYS = ("lat", "lon", "ele", "year", "month", "day", "hour")


class ConfigurationError(ValueError):
    pass


class ScaleTooCoarseError(ConfigurationError):
    pass


@dataclass(frozen=True)
class StationMeta:
    id: str
    latitude: float
    longitude: float
    elevation: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude < 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180)")
        if not math.isfinite(self.elevation):
            raise ValueError("elevation must be finite")


@dataclass(frozen=True)
class ScaleSpec:
    window: int
    stride: int

    def __post_init__(self):
        if self.window < 1 or self.stride < 1 or self.stride > self.window:
            raise ConfigurationError(f"invalid scale (window={self.window}, stride={self.stride})")

    def count(self, length: int) -> int:
        if self.window > length:
            raise ScaleTooCoarseError(
                f"scale (window={self.window}, stride={self.stride}) does not fit length {length}"
            )
        return (length - self.window) // self.stride + 1


def _clamp(v):
    return min(1.0, max(-1.0, v))


def normalize_geo(meta: StationMeta, ts: datetime) -> np.ndarray:
    """Seven scalars in [-1, 1]: lat, lon, elevation, year, month, day, hour."""
    return np.array([
        _clamp(meta.latitude / 90.0),
        _clamp(meta.longitude / 180.0),
        _clamp(meta.elevation / 9000.0),
        _clamp((ts.year - 2014) / 10.0),
        _clamp((ts.month - 6.5) / 5.5),
        _clamp((ts.day - 16.0) / 15.0),
        _clamp((ts.hour - 11.5) / 11.5),
    ])


def geo_features(meta: StationMeta, stamps: Sequence[datetime]) -> np.ndarray:
    if len(stamps) < 1:
        raise ValueError("need at least one timestamp")
    return np.stack([normalize_geo(meta, ts) for ts in stamps])


def init_geo_params(rng, d):
    return {k: {"weight": uniform_fan_in(rng, len(GEO_KEYS), d),
                "bias": np.zeros(d)} for k in GEO_KEYS}


def geo_encode_features(params, feats) -> tp.Tensor:
    """(..., T, 7) normalized scalars -> (..., T, d)."""
    d = params["lat"]["weight"].shape[-1]
    w = tp.concat([tp.reshape(params[k]["weight"], (1, d)) for k in GEO_KEYS], axis=0)
    bias = params[GEO_KEYS[0]]["bias"]
    for k in GEO_KEYS[1:]:
        bias = tp.add(bias, params[k]["bias"])
    return tp.add(tp.matmul(np.asarray(feats, dtype=np.float64), w), bias)


def geo_encode(params, meta: StationMeta, stamps: Sequence[datetime]) -> tp.Tensor:
    return geo_encode_features(params, geo_features(meta, stamps))


def pos_encode(length: int, d: int) -> np.ndarray:
    if d % 2:
        raise ConfigurationError(f"positional encoding needs even width, got d={d}")
    t = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(t * freq)
    pe[:, 1::2] = np.cos(t * freq)
    return pe


def init_value_params(rng, d):
    return {"weight": rng.uniform(-1.0, 1.0, size=d), "bias": np.zeros(d)}


def embed_values(x, value_map) -> tp.Tensor:
    """(..., M, T) scalars -> (..., M, T, d), one affine map shared by all entries."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite value passed to embed_values")
    return tp.add(tp.mul(x[..., None], value_map["weight"]), value_map["bias"])


def build_input_features(params, x, geo_feats) -> tp.Tensor:
    """Batched form of :func:`build_input` taking precomputed geo scalars."""
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[-1]
    d = params["value"]["weight"].shape[-1]
    geo = geo_encode_features(params["geo"], geo_feats)
    geo = tp.reshape(geo, geo.shape[:-2] + (1, length, d))
    return tp.add(tp.add(embed_values(x, params["value"]), pos_encode(length, d)), geo)


def build_input(x, meta: StationMeta, stamps: Sequence[datetime], params) -> tp.Tensor:
    x = np.asarray(x, dtype=np.float64)
    if len(stamps) != x.shape[-1]:
        raise ValueError(f"{len(stamps)} timestamps for {x.shape[-1]} steps")
    return build_input_features(params, x, geo_features(meta, stamps))


def init_patch_params(rng, scale: ScaleSpec, d):
    fan_in = scale.window * d
    return {"weight": uniform_fan_in(rng, fan_in, (fan_in, d)),
            "bias": uniform_fan_in(rng, fan_in, d)}


def patchify(h, scale: ScaleSpec, proj) -> tp.Tensor:
    """(..., M, T, d) -> (..., M, N, d); patches flattened position-major."""
    h = tp.as_tensor(h)
    length, d = h.shape[-2], h.shape[-1]
    n = scale.count(length)
    win = tp.gather_windows(h, scale.window, scale.stride, n)
    flat = tp.reshape(win, win.shape[:-2] + (scale.window * d,))
    return tp.linear(flat, proj["weight"], proj["bias"])
